#include "assd/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "assd/fileio.hpp"
#include "assd/layers.hpp"

namespace assd {

std::vector<std::uint8_t> encodePpm(const ImageU8& img) {
    if (img.width < 1 || img.height < 1 || img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw std::invalid_argument("encodePpm: malformed image");
    std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), img.rgb.begin(), img.rgb.end());
    return bytes;
}

namespace {

// Reads one PPM header token, skipping whitespace and '#' comments.
std::string nextToken(const std::uint8_t* data, std::size_t len, std::size_t& pos) {
    while (pos < len) {
        if (std::isspace(data[pos])) {
            ++pos;
        } else if (data[pos] == '#') {
            while (pos < len && data[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < len && !std::isspace(data[pos])) tok += static_cast<char>(data[pos++]);
    if (tok.empty()) throw std::runtime_error("PPM: truncated header");
    return tok;
}

int parsePositive(const std::string& tok, const char* what) {
    try {
        const int v = std::stoi(tok);
        if (v < 1) throw std::runtime_error("");
        return v;
    } catch (...) {
        throw std::runtime_error(std::string("PPM: invalid ") + what + " '" + tok + "'");
    }
}

} // namespace

ImageU8 decodePpm(const std::uint8_t* data, std::size_t len) {
    std::size_t pos = 0;
    if (nextToken(data, len, pos) != "P6") throw std::runtime_error("PPM: expected binary P6 magic");
    ImageU8 img;
    img.width = parsePositive(nextToken(data, len, pos), "width");
    img.height = parsePositive(nextToken(data, len, pos), "height");
    const int maxval = parsePositive(nextToken(data, len, pos), "maxval");
    if (maxval != 255) throw std::runtime_error("PPM: only maxval 255 supported, got " + std::to_string(maxval));
    ++pos; // single whitespace after maxval
    const std::size_t need = static_cast<std::size_t>(img.width) * img.height * 3;
    if (pos + need > len) throw std::runtime_error("PPM: truncated pixel data");
    img.rgb.assign(data + pos, data + pos + need);
    return img;
}

ImageU8 readPpm(const std::string& path) {
    const std::vector<std::uint8_t> bytes = readFileBytes(path);
    return decodePpm(bytes.data(), bytes.size());
}

void writePpm(const std::string& path, const ImageU8& img) {
    atomicWriteFile(path, encodePpm(img));
}

Tensor imageToTensor(const ImageU8& img) {
    Tensor t({3, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                t.at(static_cast<std::size_t>(c), static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                    img.at(y, x, c) / 255.0;
    return t;
}

ImageU8 tensorToImage(const Tensor& t) {
    if (t.rank() != 3 || t.dim(0) != 3)
        throw std::invalid_argument("tensorToImage: expected [3,H,W], got " + t.shapeStr());
    ImageU8 img;
    img.height = static_cast<int>(t.dim(1));
    img.width = static_cast<int>(t.dim(2));
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = t.at(static_cast<std::size_t>(c), static_cast<std::size_t>(y),
                                      static_cast<std::size_t>(x));
                img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
    return img;
}

ImageU8 renderAttentionOverlay(const ImageU8& src, const Tensor& rowGrid) {
    if (rowGrid.rank() != 2)
        throw std::invalid_argument("renderAttentionOverlay: expected [gridH,gridW] row, got " + rowGrid.shapeStr());

    Tensor grid = reshape(rowGrid, {1, rowGrid.dim(0), rowGrid.dim(1)});
    Tensor up = bilinearUpsample(grid, static_cast<std::size_t>(src.height), static_cast<std::size_t>(src.width));

    const auto [mnIt, mxIt] = std::minmax_element(up.values().begin(), up.values().end());
    const double mn = *mnIt, range = *mxIt - *mnIt;

    ImageU8 out = src;
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            const double v = up.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            const double t = range > 0.0 ? (v - mn) / range : 0.0;
            const double ramp[3] = {255.0 * t, 0.0, 255.0 * (1.0 - t)}; // blue -> red
            for (int c = 0; c < 3; ++c) {
                const double blended = 0.5 * src.at(y, x, c) + 0.5 * ramp[c];
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(blended, 0.0, 255.0)));
            }
        }
    return out;
}

} // namespace assd
