#include "assd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "assd/fileio.hpp"
#include "assd/rng.hpp"
#include "json.hpp"

namespace assd {

namespace {

struct PaintedExtent {
    int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
    void cover(int x, int y) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
    }
    bool any() const { return x1 >= 0; }
};

// saturated base colors per class, jittered per shape
void classColor(int classId, Rng& rng, double rgb[3]) {
    switch (classId) {
        case kClassSquare: rgb[0] = 0.90; rgb[1] = 0.15; rgb[2] = 0.10; break;
        case kClassDisc: rgb[0] = 0.10; rgb[1] = 0.85; rgb[2] = 0.15; break;
        default: rgb[0] = 0.15; rgb[1] = 0.20; rgb[2] = 0.95; break;
    }
    for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(rgb[c] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
}

// shapes are blended over the background noise at fixed opacity: the class
// color is only a weak per-pixel cue and has to be integrated over the
// shape's extent
constexpr double kShapeOpacity = 0.55;

void paint(ImageU8& img, int x, int y, const double rgb[3], PaintedExtent& extent) {
    for (int c = 0; c < 3; ++c) {
        const double mixed = kShapeOpacity * rgb[c] * 255.0 + (1.0 - kShapeOpacity) * img.at(y, x, c);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(mixed));
    }
    extent.cover(x, y);
}

PaintedExtent drawShape(ImageU8& img, int classId, int x0, int y0, int w, int h, Rng& rng) {
    double rgb[3];
    classColor(classId, rng, rgb);
    PaintedExtent extent;
    if (classId == kClassSquare) {
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) paint(img, x, y, rgb, extent);
    } else if (classId == kClassDisc) {
        // ellipse inscribed in the w x h box, sampled at pixel centers
        const double cx = x0 + 0.5 * (w - 1), cy = y0 + 0.5 * (h - 1);
        const double rx = 0.5 * w, ry = 0.5 * h;
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                if (dx * dx + dy * dy <= 1.0) paint(img, x, y, rgb, extent);
            }
    } else {
        // isoceles triangle, apex on the top row, base on the bottom row
        const double cx = x0 + 0.5 * (w - 1);
        for (int y = y0; y < y0 + h; ++y) {
            const double t = h > 1 ? static_cast<double>(y - y0) / (h - 1) : 1.0;
            const double half = 0.5 * t * (w - 1);
            const int xa = static_cast<int>(std::ceil(cx - half));
            const int xb = static_cast<int>(std::floor(cx + half));
            for (int x = xa; x <= xb; ++x) paint(img, x, y, rgb, extent);
        }
    }
    return extent;
}

} // namespace

std::vector<Sample> synthesizeDataset(std::size_t count, std::uint64_t seed, const SynthSpec& spec) {
    if (count < 1) throw std::invalid_argument("synthesizeDataset: count must be >= 1");
    if (spec.imageSize < 8) throw std::invalid_argument("synthesizeDataset: image size too small");

    std::vector<Sample> samples;
    samples.reserve(count);
    const int s = spec.imageSize;
    for (std::size_t idx = 0; idx < count; ++idx) {
        Rng rng(deriveSeed(seed, stream::kSynth, idx));
        Sample sample;
        sample.image.width = s;
        sample.image.height = s;
        sample.image.rgb.resize(static_cast<std::size_t>(s) * s * 3);
        // full-range uniform background noise; local patches regularly mimic
        // the shape colors, so context has to carry part of the decision
        for (std::uint8_t& v : sample.image.rgb)
            v = static_cast<std::uint8_t>(rng.uniformInt(0, 255));

        const int wanted = rng.uniformInt(spec.minShapes, spec.maxShapes);
        for (int k = 0; k < wanted; ++k) {
            const int classId = rng.uniformInt(1, kNumShapeClasses);
            // retry placement until the new box barely overlaps existing ones
            for (int attempt = 0; attempt < 100; ++attempt) {
                const int w = std::max(3, static_cast<int>(std::lround(rng.uniform(spec.minSizeFrac, spec.maxSizeFrac) * s)));
                const int h = std::max(3, static_cast<int>(std::lround(rng.uniform(spec.minSizeFrac, spec.maxSizeFrac) * s)));
                if (w > s || h > s) continue;
                const int x0 = rng.uniformInt(0, s - w);
                const int y0 = rng.uniformInt(0, s - h);
                Box proposal{static_cast<double>(x0) / s, static_cast<double>(y0) / s,
                             static_cast<double>(x0 + w) / s, static_cast<double>(y0 + h) / s};
                bool clear = true;
                for (const Box& existing : sample.boxes)
                    if (iou(proposal, existing) > 0.05) { clear = false; break; }
                if (!clear) continue;

                const PaintedExtent extent = drawShape(sample.image, classId, x0, y0, w, h, rng);
                if (!extent.any()) continue;
                Box gt;
                gt.xmin = static_cast<double>(extent.x0) / s;
                gt.ymin = static_cast<double>(extent.y0) / s;
                gt.xmax = static_cast<double>(extent.x1 + 1) / s;
                gt.ymax = static_cast<double>(extent.y1 + 1) / s;
                gt.classId = classId;
                sample.boxes.push_back(gt);
                break;
            }
        }
        samples.push_back(std::move(sample));
    }
    return samples;
}

std::string manifestToJson(const std::vector<Sample>& samples,
                           const std::vector<std::string>& imagePaths) {
    if (samples.size() != imagePaths.size())
        throw std::invalid_argument("manifest: path count does not match sample count");
    nlohmann::json j;
    j["samples"] = nlohmann::json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        nlohmann::json js;
        js["image"] = imagePaths[i];
        js["boxes"] = nlohmann::json::array();
        for (const Box& b : samples[i].boxes) {
            nlohmann::json jb;
            jb["box"] = {b.xmin, b.ymin, b.xmax, b.ymax};
            jb["class"] = b.classId;
            js["boxes"].push_back(std::move(jb));
        }
        j["samples"].push_back(std::move(js));
    }
    return j.dump(2);
}

void writeDataset(const std::string& dir, const std::vector<Sample>& samples) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    std::vector<std::string> paths;
    paths.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "images/img_%05zu.ppm", i);
        paths.emplace_back(name);
        writePpm((fs::path(dir) / name).string(), samples[i].image);
    }
    atomicWriteFile((fs::path(dir) / "manifest.json").string(), manifestToJson(samples, paths));
}

std::vector<Sample> loadDataset(const std::string& manifestPath) {
    namespace fs = std::filesystem;
    const std::vector<std::uint8_t> bytes = readFileBytes(manifestPath);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest: invalid JSON in " + manifestPath + ": " + e.what());
    }
    const fs::path base = fs::path(manifestPath).parent_path();
    std::vector<Sample> samples;
    try {
        for (const nlohmann::json& js : j.at("samples")) {
            Sample s;
            s.image = readPpm((base / js.at("image").get<std::string>()).string());
            for (const nlohmann::json& jb : js.at("boxes")) {
                const std::vector<double> coords = jb.at("box").get<std::vector<double>>();
                if (coords.size() != 4) throw std::runtime_error("manifest: box needs 4 coordinates");
                Box b{coords[0], coords[1], coords[2], coords[3]};
                b.classId = jb.at("class").get<int>();
                if (!b.valid() || b.xmin < 0.0 || b.ymin < 0.0 || b.xmax > 1.0 || b.ymax > 1.0)
                    throw std::runtime_error("manifest: invalid box coordinates");
                if (b.classId < 1) throw std::runtime_error("manifest: class ids must be >= 1");
                s.boxes.push_back(b);
            }
            samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest: missing or malformed field: " + std::string(e.what()));
    }
    return samples;
}

} // namespace assd
