// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criterion 5 trains nine models and dominates the runtime.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "assd/attention.hpp"
#include "assd/checkpoint.hpp"
#include "assd/dataset.hpp"
#include "assd/detector.hpp"
#include "assd/evalmap.hpp"
#include "assd/fileio.hpp"
#include "assd/gradcheck.hpp"
#include "assd/image.hpp"
#include "assd/rng.hpp"
#include "assd/train.hpp"
#include "../reference_impls.hpp"

using namespace assd;
namespace fs = std::filesystem;

namespace {

double nowSeconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

struct Criterion {
    int id;
    std::string label;
    bool pass;
    double seconds;
    std::string detail;
};

Tensor randomTensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

Box randomBox(Rng& rng) {
    const double cx = rng.uniform(0.15, 0.85), cy = rng.uniform(0.15, 0.85);
    const double w = rng.uniform(0.05, 0.3), h = rng.uniform(0.05, 0.3);
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

// ---------------------------------------------------------------- criterion 1

Criterion attentionCorrectness() {
    const double t0 = nowSeconds();
    bool pass = true;
    std::string detail;
    int instances = 0;

    for (std::size_t c : {8u, 16u}) {
        for (std::size_t side : {1u, 2u, 3u, 4u}) {
            for (int trial = 0; trial < 7; ++trial) {
                Rng rng(deriveSeed(4242, c, side, static_cast<std::uint64_t>(trial)));
                AttentionParams p = initAttentionParams(c, rng);
                const Tensor x = randomTensor({c, side, side}, rng);
                const std::size_t n = side * side;
                ++instances;

                // (a) row-stochastic scores
                const AttentionMap map = attentionScores(x, p);
                for (std::size_t i = 0; i < n && pass; ++i) {
                    double total = 0.0;
                    for (std::size_t j = 0; j < n; ++j) total += map.scores.at(i, j);
                    if (std::fabs(total - 1.0) > 1e-6) {
                        pass = false;
                        detail = "row sum violated";
                    }
                }

                // (b) zero value weights give the exact identity
                AttentionParams off = p;
                off.wv = Tensor::zerosLike(off.wv);
                const Tensor identity = attentionForward(x, off);
                for (std::size_t i = 0; i < x.size() && pass; ++i)
                    if (identity[i] != x[i]) {
                        pass = false;
                        detail = "residual identity violated";
                    }

                // (c) spatial permutation equivariance
                std::vector<std::size_t> perm(n);
                std::iota(perm.begin(), perm.end(), 0);
                for (std::size_t i = n; i > 1; --i)
                    std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniformInt(0, static_cast<int>(i) - 1))]);
                Tensor xp = Tensor::zerosLike(x);
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t i = 0; i < n; ++i) xp.values()[ch * n + perm[i]] = x.values()[ch * n + i];
                const Tensor y = attentionForward(x, p);
                const Tensor yp = attentionForward(xp, p);
                Tensor ypWant = Tensor::zerosLike(y);
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t i = 0; i < n; ++i) ypWant.values()[ch * n + perm[i]] = y.values()[ch * n + i];
                if (pass && maxRelError(yp, ypWant, 1.0) > 1e-9) {
                    pass = false;
                    detail = "permutation equivariance violated";
                }

                // (d) dense independent evaluation of the defining equations
                const ref::AttentionRef want = ref::attention(x, p.wq, p.wk, p.wv);
                if (pass && maxRelError(y, want.output, 1.0) > 1e-10) {
                    pass = false;
                    detail = "dense oracle mismatch";
                }
            }
        }
    }

    const double dt = nowSeconds() - t0;
    if (pass && dt >= 10.0) {
        pass = false;
        detail = "over the 10 s budget";
    }
    if (pass) detail = std::to_string(instances) + " instances";
    return {1, "attention correctness suite", pass, dt, detail};
}

// ---------------------------------------------------------------- criterion 2

Criterion gradientVerification() {
    const double t0 = nowSeconds();
    const std::vector<GradCheckCase> cases = runGradChecks(1);
    bool pass = allPass(cases);
    std::string detail = std::to_string(cases.size()) + " checks";
    double worst = 0.0;
    for (const GradCheckCase& c : cases) {
        worst = std::max(worst, c.maxRel / c.tolerance);
        if (!c.pass) detail = c.name + " maxrel " + std::to_string(c.maxRel);
    }
    const double dt = nowSeconds() - t0;
    if (pass && dt >= 120.0) {
        pass = false;
        detail = "over the 2 min budget";
    }
    if (pass) detail += ", worst at " + std::to_string(worst) + " of tolerance";
    return {2, "gradient verification", pass, dt, detail};
}

// ---------------------------------------------------------------- criterion 3

Criterion geometryOracles() {
    const double t0 = nowSeconds();
    bool pass = true;
    std::string detail;

    // anchor identities before clipping
    const AnchorSpec spec = PyramidConfig::toyDefault().anchorSpec();
    for (const AnchorLayerSpec& layer : spec) {
        const std::vector<Box> anchors = generateLayerAnchors(layer, false);
        const std::size_t perCell = anchorsPerCell(layer);
        for (std::size_t i = 0; i < anchors.size() && pass; ++i) {
            const std::size_t slot = i % perCell;
            const bool extra = slot == layer.aspectRatios.size();
            const double s = extra ? std::sqrt(layer.sMin * layer.sMax) : layer.sMin;
            const double ar = extra ? 1.0 : layer.aspectRatios[slot];
            const Box& a = anchors[i];
            if (std::fabs(a.width() * a.height() - s * s) > 1e-12 ||
                std::fabs(a.width() / a.height() - ar) > 1e-12) {
                pass = false;
                detail = "anchor identity violated";
            }
        }
    }

    // NMS and matching against brute force
    Rng rng(31337);
    for (int trial = 0; trial < 200 && pass; ++trial) {
        std::vector<Box> boxes;
        const int n = rng.uniformInt(1, 30);
        for (int i = 0; i < n; ++i) {
            Box b = randomBox(rng);
            b.score = rng.uniform(0.0, 1.0);
            boxes.push_back(b);
        }
        const std::vector<Box> got = nms(boxes, 0.45);
        const std::vector<Box> want = ref::nms(boxes, 0.45);
        if (got.size() != want.size()) {
            pass = false;
            detail = "nms oracle mismatch";
            break;
        }
        for (std::size_t i = 0; i < got.size(); ++i)
            if (got[i].score != want[i].score || got[i].xmin != want[i].xmin) {
                pass = false;
                detail = "nms oracle mismatch";
            }

        std::vector<Box> truths;
        const int nt = rng.uniformInt(1, 4);
        for (int t = 0; t < nt; ++t) {
            Box b = randomBox(rng);
            b.classId = 1 + t;
            truths.push_back(b);
        }
        if (matchAnchors(boxes, truths, 0.5).matchedTruth != ref::match(boxes, truths, 0.5)) {
            pass = false;
            detail = "matching oracle mismatch";
        }
    }

    // encode/decode round trip
    for (int trial = 0; trial < 200 && pass; ++trial) {
        const Box gt = randomBox(rng);
        const Box anchor = randomBox(rng);
        const Box back = decodeBox(encodeBox(gt, anchor), anchor);
        if (std::fabs(back.xmin - gt.xmin) > 1e-12 || std::fabs(back.ymin - gt.ymin) > 1e-12 ||
            std::fabs(back.xmax - gt.xmax) > 1e-12 || std::fabs(back.ymax - gt.ymax) > 1e-12) {
            pass = false;
            detail = "encode/decode round trip violated";
        }
    }

    // mAP against the exhaustive PR oracle
    for (int trial = 0; trial < 100 && pass; ++trial) {
        const std::size_t images = 3;
        std::vector<std::vector<Box>> truths(images);
        std::vector<std::vector<Detection>> dets(images);
        for (std::size_t img = 0; img < images; ++img) {
            for (int t = rng.uniformInt(0, 3); t > 0; --t) {
                Box b = randomBox(rng);
                b.classId = rng.uniformInt(1, 2);
                truths[img].push_back(b);
            }
            for (int d = rng.uniformInt(0, 6); d > 0; --d) {
                Detection det = randomBox(rng);
                det.classId = rng.uniformInt(1, 2);
                det.score = rng.uniform(0.05, 1.0);
                dets[img].push_back(det);
            }
        }
        const EvalResult got = evaluateMAP(dets, truths, 0.5);

        double wantMean = 0.0;
        std::size_t withTruth = 0;
        for (int cls = 1; cls <= 2; ++cls) {
            std::size_t totalTruths = 0;
            for (const auto& image : truths)
                for (const Box& t : image)
                    if (t.classId == cls) ++totalTruths;
            if (totalTruths == 0) continue;
            ++withTruth;
            struct Entry {
                double score;
                std::size_t img, idx;
            };
            std::vector<Entry> ranked;
            for (std::size_t img = 0; img < images; ++img)
                for (std::size_t d = 0; d < dets[img].size(); ++d)
                    if (dets[img][d].classId == cls) ranked.push_back({dets[img][d].score, img, d});
            std::sort(ranked.begin(), ranked.end(), [](const Entry& a, const Entry& b) {
                if (a.score != b.score) return a.score > b.score;
                if (a.img != b.img) return a.img < b.img;
                return a.idx < b.idx;
            });
            std::vector<std::vector<bool>> used(images);
            for (std::size_t img = 0; img < images; ++img) used[img].assign(truths[img].size(), false);
            std::vector<std::pair<double, bool>> scored;
            for (const Entry& e : ranked) {
                double best = 0.0;
                int bestT = -1;
                for (std::size_t t = 0; t < truths[e.img].size(); ++t) {
                    if (truths[e.img][t].classId != cls || used[e.img][t]) continue;
                    const double ov = ref::iou(dets[e.img][e.idx], truths[e.img][t]);
                    if (ov > best) {
                        best = ov;
                        bestT = static_cast<int>(t);
                    }
                }
                const bool tp = bestT >= 0 && best >= 0.5;
                if (tp) used[e.img][static_cast<std::size_t>(bestT)] = true;
                scored.emplace_back(e.score, tp);
            }
            wantMean += ref::averagePrecision(scored, totalTruths);
        }
        if (withTruth > 0) wantMean /= static_cast<double>(withTruth);
        if (std::fabs(got.meanAp - wantMean) > 1e-12) {
            pass = false;
            detail = "mAP oracle mismatch";
        }
    }

    const double dt = nowSeconds() - t0;
    if (pass && dt >= 30.0) {
        pass = false;
        detail = "over the 30 s budget";
    }
    if (pass) detail = "anchors, nms, matching, encode/decode, mAP";
    return {3, "geometry oracles", pass, dt, detail};
}

// ---------------------------------------------------------------- criterion 4

Criterion attentionOffReduction() {
    const double t0 = nowSeconds();
    const PyramidConfig full = PyramidConfig::toyDefault();
    PyramidConfig plain = full;
    plain.useAttention = false;
    plain.useFusion = false;

    ModelParams params = initParams(full, 404);
    for (AttentionParams& a : params.attention) a.wv = Tensor::zerosLike(a.wv);
    params.fusion.weight = Tensor::zerosLike(params.fusion.weight);
    for (std::size_t c = 0; c < static_cast<std::size_t>(full.scales[0].channels); ++c)
        params.fusion.weight.at(c, c) = 1.0;
    params.fusion.bias = Tensor::zerosLike(params.fusion.bias);

    ModelParams baseline;
    baseline.backbone = params.backbone;
    baseline.heads = params.heads;

    bool pass = true;
    Rng rng(405);
    for (int i = 0; i < 10 && pass; ++i) {
        const Tensor image = randomTensor({3, 64, 64}, rng, 0.0, 1.0);
        const ForwardResult a = detectorForward(image, params, full);
        const ForwardResult b = detectorForward(image, baseline, plain);
        if (maxRelError(a.locRows(), b.locRows(), 1.0) > 1e-9 ||
            maxRelError(a.confRows(), b.confRows(), 1.0) > 1e-9)
            pass = false;
    }
    return {4, "attention-off reduction", pass, nowSeconds() - t0,
            pass ? "10 images, exact to 1e-9" : "outputs diverged"};
}

// ---------------------------------------------------------------- criterion 5

PyramidConfig ablationConfig(bool attention, bool fusion) {
    PyramidConfig c;
    c.imageSize = 64;
    c.numClasses = 3;
    c.useAttention = attention;
    c.useFusion = fusion;
    c.scales = {
        {16, 8, {1.0, 2.0, 0.5}, 0.10, 0.30, true},
        {24, 4, {1.0, 2.0, 0.5, 3.0, 1.0 / 3.0}, 0.30, 0.50, true},
        {32, 2, {1.0, 2.0, 0.5}, 0.50, 0.70, true},
    };
    return c;
}

Criterion ablationDirection() {
    const double t0 = nowSeconds();
    const int epochs = 60;
    const std::vector<std::pair<int, double>> schedule = {{42, 0.1}, {54, 0.1}};
    const std::vector<std::uint64_t> seeds = {1, 2, 3};

    const std::vector<Sample> trainSet = synthesizeDataset(500, 1001);
    const std::vector<Sample> testSet = synthesizeDataset(100, 2002);

    struct Variant {
        const char* name;
        bool attention, fusion;
        std::vector<double> maps;
    };
    std::vector<Variant> variants = {
        {"baseline", false, false, {}},
        {"+att", true, false, {}},
        {"+fusion+att", true, true, {}},
    };

    TrainOptions options; // paper settings: lr 1e-3, momentum 0.9, decay 5e-4
    for (Variant& v : variants) {
        const PyramidConfig config = ablationConfig(v.attention, v.fusion);
        for (std::uint64_t seed : seeds) {
            const double tRun = nowSeconds();
            const TrainResult r = trainLoop(config, trainSet, epochs, schedule, seed, options);
            const double mAp = evaluateModel(r.params, config, testSet).meanAp;
            v.maps.push_back(mAp);
            std::fprintf(stderr, "  [ablation] %-12s seed %llu mAP %.4f (%.0fs, final loss %.3f)\n", v.name,
                         static_cast<unsigned long long>(seed), mAp, nowSeconds() - tRun, r.epochLoss.back());
        }
    }

    auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    const double base = mean(variants[0].maps);
    const double att = mean(variants[1].maps);
    const double both = mean(variants[2].maps);

    const double dt = nowSeconds() - t0;
    bool pass = att > base && both >= att - 0.01;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "mean mAP baseline %.4f, +att %.4f, +fusion+att %.4f", base, att, both);
    std::string detail = buf;
    if (dt >= 45.0 * 60.0) {
        pass = false;
        detail += " (over the 45 min budget)";
    }
    return {5, "ablation direction", pass, dt, detail};
}

// ---------------------------------------------------------------- criterion 6

Criterion overfitSanity() {
    const double t0 = nowSeconds();
    const PyramidConfig config = PyramidConfig::toyDefault();
    const std::vector<Sample> one = synthesizeDataset(1, 606);
    TrainOptions options;
    options.batchSize = 1;
    options.augment = false;
    const TrainResult r = trainLoop(config, one, 200, {}, 7, options);
    const bool pass = r.epochLoss.back() < 0.1 * r.epochLoss.front();
    char buf[96];
    std::snprintf(buf, sizeof(buf), "loss %.4f -> %.4f", r.epochLoss.front(), r.epochLoss.back());
    return {6, "overfit sanity", pass, nowSeconds() - t0, buf};
}

// ---------------------------------------------------------------- criterion 7

Criterion visualizationContract() {
    const double t0 = nowSeconds();
    const fs::path dir = fs::temp_directory_path() / "assd_acceptance";
    fs::create_directories(dir);

    const PyramidConfig config = PyramidConfig::toyDefault();

    // a mid-gray source image keeps the heat channels clean
    ImageU8 gray;
    gray.width = 64;
    gray.height = 64;
    gray.rgb.assign(64 * 64 * 3, 128);
    const fs::path imagePath = dir / "gray.ppm";
    writePpm(imagePath.string(), gray);

    auto runAttend = [&](const std::string& model, const std::string& out, int qx, int qy) {
        const std::string cmd = std::string(ASSD_CLI_PATH) + " attend --model " + model + " --image " +
                                imagePath.string() + " --scale 1 --query " + std::to_string(qx) + "," +
                                std::to_string(qy) + " --out " + out + " >/dev/null 2>&1";
        return std::system(cmd.c_str()) == 0;
    };

    bool pass = true;
    std::string detail;

    // uniform attention must render flat
    {
        ModelParams params = initParams(config, 700);
        for (AttentionParams& a : params.attention) a.wq = Tensor::zerosLike(a.wq);
        const fs::path model = dir / "uniform.assd";
        saveCheckpoint(model.string(), config, params);
        const fs::path heat = dir / "flat.ppm";
        if (!runAttend(model.string(), heat.string(), 3, 4)) {
            pass = false;
            detail = "attend command failed";
        } else {
            const ImageU8 overlay = readPpm(heat.string());
            for (std::size_t i = 0; i < overlay.rgb.size() && pass; i += 3)
                if (overlay.rgb[i] != overlay.rgb[0] || overlay.rgb[i + 1] != overlay.rgb[1] ||
                    overlay.rgb[i + 2] != overlay.rgb[2]) {
                    pass = false;
                    detail = "uniform model overlay is not flat";
                }
        }
    }

    // overlay argmax must land in the attention row's argmax cell
    if (pass) {
        const ModelParams params = initParams(config, 701);
        const fs::path model = dir / "random.assd";
        saveCheckpoint(model.string(), config, params);

        const int qx = 2, qy = 5, grid = config.scales[0].grid;
        const ForwardResult fr = detectorForward(imageToTensor(gray), params, config);
        const Tensor row = extractQueryRow(fr.scales[0].attention,
                                           static_cast<std::size_t>(qy) * static_cast<std::size_t>(grid) + qx,
                                           static_cast<std::size_t>(grid), static_cast<std::size_t>(grid));
        std::size_t argmax = 0;
        for (std::size_t i = 1; i < row.size(); ++i)
            if (row[i] > row[argmax]) argmax = i;

        const fs::path heat = dir / "peak.ppm";
        if (!runAttend(model.string(), heat.string(), qx, qy)) {
            pass = false;
            detail = "attend command failed";
        } else {
            const ImageU8 overlay = readPpm(heat.string());
            int bestVal = -1000, bestX = 0, bestY = 0;
            for (int y = 0; y < overlay.height; ++y)
                for (int x = 0; x < overlay.width; ++x) {
                    const int heatVal = static_cast<int>(overlay.at(y, x, 0)) - static_cast<int>(overlay.at(y, x, 2));
                    if (heatVal > bestVal) {
                        bestVal = heatVal;
                        bestX = x;
                        bestY = y;
                    }
                }
            const int cells = 64 / grid;
            const std::size_t overlayCell =
                static_cast<std::size_t>(bestY / cells) * static_cast<std::size_t>(grid) +
                static_cast<std::size_t>(bestX / cells);
            if (overlayCell != argmax) {
                pass = false;
                detail = "overlay argmax cell " + std::to_string(overlayCell) + " != row argmax " +
                         std::to_string(argmax);
            }
        }
    }

    if (pass) detail = "flat overlay and argmax agreement via the CLI";
    return {7, "visualization contract", pass, nowSeconds() - t0, detail};
}

// ---------------------------------------------------------------- criterion 8

Criterion reproducibility() {
    const double t0 = nowSeconds();
    PyramidConfig config = PyramidConfig::toyDefault();
    const std::vector<Sample> data = synthesizeDataset(24, 808);
    TrainOptions options;

    const TrainResult r1 = trainLoop(config, data, 3, {{2, 0.1}}, 1234, options);
    const TrainResult r2 = trainLoop(config, data, 3, {{2, 0.1}}, 1234, options);

    bool pass = r1.epochLoss.size() == r2.epochLoss.size();
    for (std::size_t i = 0; pass && i < r1.epochLoss.size(); ++i)
        if (r1.epochLoss[i] != r2.epochLoss[i]) pass = false;

    const std::vector<std::uint8_t> c1 = encodeCheckpoint(config, r1.params);
    const std::vector<std::uint8_t> c2 = encodeCheckpoint(config, r2.params);
    if (c1 != c2) pass = false;

    return {8, "reproducibility", pass, nowSeconds() - t0,
            pass ? "bit-identical loss histories and checkpoints" : "runs diverged"};
}

} // namespace

int main() {
    std::vector<Criterion> results;
    results.push_back(attentionCorrectness());
    results.push_back(gradientVerification());
    results.push_back(geometryOracles());
    results.push_back(attentionOffReduction());
    results.push_back(ablationDirection());
    results.push_back(overfitSanity());
    results.push_back(visualizationContract());
    results.push_back(reproducibility());

    bool all = true;
    for (const Criterion& c : results) {
        std::printf("[%s] criterion %d: %s (%.1fs) %s\n", c.pass ? "PASS" : "FAIL", c.id, c.label.c_str(),
                    c.seconds, c.detail.c_str());
        all = all && c.pass;
    }
    std::printf("%s\n", all ? "ACCEPTANCE: all criteria passed" : "ACCEPTANCE: FAILURES present");
    return all ? 0 : 1;
}
