#include "assd/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "assd/attention.hpp"
#include "json.hpp"

namespace assd {

AnchorSpec PyramidConfig::anchorSpec() const {
    AnchorSpec spec;
    spec.reserve(scales.size());
    for (const ScaleSpec& s : scales)
        spec.push_back({s.grid, s.grid, s.aspectRatios, s.sMin, s.sMax, s.extraUnitBox});
    return spec;
}

std::size_t PyramidConfig::boxesPerCell(std::size_t scale) const {
    const ScaleSpec& s = scales[scale];
    return s.aspectRatios.size() + (s.extraUnitBox ? 1 : 0);
}

std::size_t PyramidConfig::anchorsAtScale(std::size_t scale) const {
    const ScaleSpec& s = scales[scale];
    return static_cast<std::size_t>(s.grid) * s.grid * boxesPerCell(scale);
}

std::size_t PyramidConfig::totalAnchors() const {
    std::size_t n = 0;
    for (std::size_t s = 0; s < scales.size(); ++s) n += anchorsAtScale(s);
    return n;
}

PyramidConfig PyramidConfig::toyDefault() {
    PyramidConfig c;
    c.imageSize = 64;
    c.numClasses = 3;
    c.useAttention = true;
    c.useFusion = true;
    c.scales = {
        {32, 8, {1.0, 2.0, 0.5}, 0.10, 0.30, true},
        {48, 4, {1.0, 2.0, 0.5, 3.0, 1.0 / 3.0}, 0.30, 0.50, true},
        {64, 2, {1.0, 2.0, 0.5}, 0.50, 0.70, true},
    };
    return c;
}

void validateConfig(const PyramidConfig& config) {
    if (config.imageSize < 2) throw std::invalid_argument("config: image size must be >= 2");
    if (config.numClasses < 1) throw std::invalid_argument("config: need at least one object class");
    if (config.scales.empty()) throw std::invalid_argument("config: need at least one scale");

    int prevGrid = config.imageSize;
    for (std::size_t i = 0; i < config.scales.size(); ++i) {
        const ScaleSpec& s = config.scales[i];
        if (s.channels < 1) throw std::invalid_argument("config: scale " + std::to_string(i) + " has no channels");
        if (s.grid < 1 || s.grid >= prevGrid)
            throw std::invalid_argument("config: grids must strictly decrease from the image size, scale " +
                                        std::to_string(i) + " has grid " + std::to_string(s.grid));
        // the stride-2 chain must land exactly on each grid
        int r = prevGrid;
        while (r > s.grid) {
            if (r % 2 != 0)
                throw std::invalid_argument("config: grid " + std::to_string(s.grid) +
                                            " unreachable from " + std::to_string(prevGrid) + " by halving");
            r /= 2;
        }
        if (r != s.grid)
            throw std::invalid_argument("config: grid " + std::to_string(s.grid) + " unreachable from " +
                                        std::to_string(prevGrid) + " by halving");
        const std::size_t locations = static_cast<std::size_t>(s.grid) * s.grid;
        if (locations > kMaxAttentionLocations)
            throw std::invalid_argument("config: scale " + std::to_string(i) + " has " + std::to_string(locations) +
                                        " locations, above the attention capacity bound " +
                                        std::to_string(kMaxAttentionLocations));
        if (!(s.sMin > 0.0 && s.sMin < s.sMax && s.sMax <= 1.0))
            throw std::invalid_argument("config: scale " + std::to_string(i) + " needs 0 < sMin < sMax <= 1");
        if (s.aspectRatios.empty())
            throw std::invalid_argument("config: scale " + std::to_string(i) + " has no aspect ratios");
        for (double ar : s.aspectRatios)
            if (!(ar > 0.0)) throw std::invalid_argument("config: aspect ratios must be positive");
        prevGrid = s.grid;
    }
}

std::string configToJson(const PyramidConfig& config) {
    nlohmann::json j;
    j["image_size"] = config.imageSize;
    j["num_classes"] = config.numClasses;
    j["use_attention"] = config.useAttention;
    j["use_fusion"] = config.useFusion;
    j["scales"] = nlohmann::json::array();
    for (const ScaleSpec& s : config.scales) {
        nlohmann::json js;
        js["channels"] = s.channels;
        js["grid"] = s.grid;
        js["aspect_ratios"] = s.aspectRatios;
        js["s_min"] = s.sMin;
        js["s_max"] = s.sMax;
        js["extra_unit_box"] = s.extraUnitBox;
        j["scales"].push_back(std::move(js));
    }
    return j.dump(2);
}

PyramidConfig configFromJson(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    PyramidConfig c;
    try {
        c.imageSize = j.at("image_size").get<int>();
        c.numClasses = j.at("num_classes").get<int>();
        c.useAttention = j.value("use_attention", true);
        c.useFusion = j.value("use_fusion", true);
        for (const nlohmann::json& js : j.at("scales")) {
            ScaleSpec s;
            s.channels = js.at("channels").get<int>();
            s.grid = js.at("grid").get<int>();
            s.aspectRatios = js.at("aspect_ratios").get<std::vector<double>>();
            s.sMin = js.at("s_min").get<double>();
            s.sMax = js.at("s_max").get<double>();
            s.extraUnitBox = js.value("extra_unit_box", true);
            c.scales.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: missing or malformed field: ") + e.what());
    }
    validateConfig(c);
    return c;
}

PyramidConfig loadConfigFile(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return configFromJson(ss.str());
}

} // namespace assd
