#include "assd/checkpoint.hpp"

#include <cstring>
#include <stdexcept>

#include "assd/fileio.hpp"

namespace assd {

namespace {

void putU32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void putF32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    putU32(out, bits);
}

struct Reader {
    const std::uint8_t* data;
    std::size_t len;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > len) throw std::runtime_error("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        const std::uint32_t v = static_cast<std::uint32_t>(data[pos]) |
                                (static_cast<std::uint32_t>(data[pos + 1]) << 8) |
                                (static_cast<std::uint32_t>(data[pos + 2]) << 16) |
                                (static_cast<std::uint32_t>(data[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string str(std::uint32_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data + pos), n);
        pos += n;
        return s;
    }
};

// learnable tensors followed by batch-norm running statistics
std::vector<std::pair<std::string, const Tensor*>> allTensors(const ModelParams& params) {
    std::vector<std::pair<std::string, const Tensor*>> named = learnableTensors(params);
    const std::vector<std::pair<std::string, const Tensor*>> state = stateTensors(params);
    named.insert(named.end(), state.begin(), state.end());
    return named;
}

} // namespace

std::vector<std::uint8_t> encodeCheckpoint(const PyramidConfig& config, const ModelParams& params) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'A', 'S', 'S', 'D'});
    putU32(out, kCheckpointVersion);

    const std::string json = configToJson(config);
    putU32(out, static_cast<std::uint32_t>(json.size()));
    out.insert(out.end(), json.begin(), json.end());

    const auto named = allTensors(params);
    putU32(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, tensor] : named) {
        putU32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        putU32(out, static_cast<std::uint32_t>(tensor->rank()));
        for (std::size_t d = 0; d < tensor->rank(); ++d)
            putU32(out, static_cast<std::uint32_t>(tensor->dim(d)));
        for (std::size_t i = 0; i < tensor->size(); ++i) putF32(out, static_cast<float>((*tensor)[i]));
    }
    return out;
}

LoadedModel decodeCheckpoint(const std::uint8_t* data, std::size_t len) {
    Reader r{data, len};
    if (r.str(4) != "ASSD") throw std::runtime_error("checkpoint: bad magic, not an ASSD model file");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));

    LoadedModel model;
    model.config = configFromJson(r.str(r.u32()));
    // build the parameter structure from the embedded config, then fill by name
    model.params = initParams(model.config, 0);

    std::vector<std::pair<std::string, Tensor*>> named = learnableTensors(model.params);
    {
        const auto state = stateTensors(model.params);
        named.insert(named.end(), state.begin(), state.end());
    }

    const std::uint32_t count = r.u32();
    if (count != named.size())
        throw std::runtime_error("checkpoint: has " + std::to_string(count) + " tensors, config implies " +
                                 std::to_string(named.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str(r.u32());
        if (name != named[i].first)
            throw std::runtime_error("checkpoint: unexpected tensor '" + name + "', wanted '" + named[i].first + "'");
        Tensor& t = *named[i].second;
        const std::uint32_t rank = r.u32();
        if (rank != t.rank()) throw std::runtime_error("checkpoint: rank mismatch for " + name);
        for (std::uint32_t d = 0; d < rank; ++d)
            if (r.u32() != t.dim(d)) throw std::runtime_error("checkpoint: shape mismatch for " + name);
        for (std::size_t e = 0; e < t.size(); ++e) t[e] = static_cast<double>(r.f32());
    }
    return model;
}

void saveCheckpoint(const std::string& path, const PyramidConfig& config, const ModelParams& params) {
    atomicWriteFile(path, encodeCheckpoint(config, params));
}

LoadedModel loadCheckpoint(const std::string& path) {
    const std::vector<std::uint8_t> bytes = readFileBytes(path);
    try {
        return decodeCheckpoint(bytes.data(), bytes.size());
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string(e.what()) + " (" + path + ")");
    }
}

} // namespace assd
