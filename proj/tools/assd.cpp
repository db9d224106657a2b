#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "assd/checkpoint.hpp"
#include "assd/config.hpp"
#include "assd/dataset.hpp"
#include "assd/detector.hpp"
#include "assd/evalmap.hpp"
#include "assd/fileio.hpp"
#include "assd/gradcheck.hpp"
#include "assd/image.hpp"
#include "assd/train.hpp"

namespace {

using namespace assd;

// default schedule: decay 0.1 at 70% and 90% of the run
std::vector<std::pair<int, double>> defaultSchedule(int epochs) {
    std::vector<std::pair<int, double>> schedule;
    const int first = epochs * 7 / 10;
    const int second = epochs * 9 / 10;
    if (first > 0) schedule.emplace_back(first, 0.1);
    if (second > first) schedule.emplace_back(second, 0.1);
    return schedule;
}

int cmdTrain(const std::string& configPath, const std::string& dataPath, int epochs,
             std::uint64_t seed, const std::string& outPath, double lr, int batch, bool augment) {
    const PyramidConfig config = loadConfigFile(configPath);
    const std::vector<Sample> data = loadDataset(dataPath);

    TrainOptions options;
    options.learningRate = lr;
    options.batchSize = batch;
    options.augment = augment;

    const TrainResult result =
        trainLoop(config, data, epochs, defaultSchedule(epochs), seed, options,
                  [](int epoch, double loss) { std::printf("epoch %d loss %.17g\n", epoch, loss); });
    saveCheckpoint(outPath, config, result.params);
    std::printf("saved %s\n", outPath.c_str());
    return 0;
}

int cmdEval(const std::string& modelPath, const std::string& dataPath, double iouThreshold) {
    const LoadedModel model = loadCheckpoint(modelPath);
    const std::vector<Sample> data = loadDataset(dataPath);
    const EvalResult result = evaluateModel(model.params, model.config, data, iouThreshold);
    for (const auto& [cls, ap] : result.apPerClass) std::printf("class %d AP %.6f\n", cls, ap);
    std::printf("mAP %.6f\n", result.meanAp);
    return 0;
}

int cmdDetect(const std::string& modelPath, const std::string& imagePath, const std::string& outPath,
              double scoreThreshold, double nmsThreshold, int maxDets) {
    const LoadedModel model = loadCheckpoint(modelPath);
    const Tensor image = imageToTensor(readPpm(imagePath));
    const std::vector<Detection> dets = detect(image, model.params, model.config, scoreThreshold,
                                               nmsThreshold, static_cast<std::size_t>(maxDets));
    nlohmann::json j = nlohmann::json::array();
    for (const Detection& d : dets) {
        nlohmann::json jd;
        jd["box"] = {d.xmin, d.ymin, d.xmax, d.ymax};
        jd["class"] = d.classId;
        jd["score"] = d.score;
        j.push_back(std::move(jd));
    }
    atomicWriteFile(outPath, j.dump(2));
    return 0;
}

int cmdAttend(const std::string& modelPath, const std::string& imagePath, int scale,
              const std::string& query, const std::string& outPath) {
    const LoadedModel model = loadCheckpoint(modelPath);
    if (!model.config.useAttention) throw std::runtime_error("attend: model was built without attention");
    if (scale < 1 || static_cast<std::size_t>(scale) > model.config.scaleCount())
        throw std::runtime_error("attend: scale " + std::to_string(scale) + " out of range 1.." +
                                 std::to_string(model.config.scaleCount()));

    int qx = -1, qy = -1;
    if (std::sscanf(query.c_str(), "%d,%d", &qx, &qy) != 2)
        throw std::runtime_error("attend: query must be x,y");
    const std::size_t s = static_cast<std::size_t>(scale - 1);
    const int grid = model.config.scales[s].grid;
    if (qx < 0 || qx >= grid || qy < 0 || qy >= grid)
        throw std::runtime_error("attend: query (" + std::to_string(qx) + "," + std::to_string(qy) +
                                 ") outside the " + std::to_string(grid) + "x" + std::to_string(grid) + " grid");

    const ImageU8 src = readPpm(imagePath);
    const ForwardResult fr = detectorForward(imageToTensor(src), model.params, model.config);
    const std::size_t location = static_cast<std::size_t>(qy) * static_cast<std::size_t>(grid) +
                                 static_cast<std::size_t>(qx);
    const Tensor row = extractQueryRow(fr.scales[s].attention, location,
                                       static_cast<std::size_t>(grid), static_cast<std::size_t>(grid));
    double total = 0.0;
    for (double v : row.values()) total += v;
    if (std::fabs(total - 1.0) > 1e-6)
        throw std::runtime_error("attend: attention row is not normalized (sum " + std::to_string(total) + ")");
    writePpm(outPath, renderAttentionOverlay(src, row));
    return 0;
}

int cmdAnchors(const std::string& configPath, const std::string& outPath) {
    const PyramidConfig config = loadConfigFile(configPath);
    const std::vector<Box> anchors = generateAnchors(config.anchorSpec());
    nlohmann::json j = nlohmann::json::array();
    for (const Box& a : anchors) j.push_back({a.xmin, a.ymin, a.xmax, a.ymax});
    atomicWriteFile(outPath, j.dump());
    return 0;
}

int cmdGradcheck(std::uint64_t seed) {
    const std::vector<GradCheckCase> cases = runGradChecks(seed);
    bool ok = true;
    for (const GradCheckCase& c : cases) {
        std::printf("%-28s maxrel %.3e tol %.0e %s\n", c.name.c_str(), c.maxRel, c.tolerance,
                    c.pass ? "PASS" : "FAIL");
        ok = ok && c.pass;
    }
    std::printf("%zu checks, %s\n", cases.size(), ok ? "all passed" : "FAILURES present");
    return ok ? 0 : 1;
}

int cmdSynth(const std::string& outDir, int count, std::uint64_t seed, int imageSize) {
    SynthSpec spec;
    spec.imageSize = imageSize;
    const std::vector<Sample> samples = synthesizeDataset(static_cast<std::size_t>(count), seed, spec);
    writeDataset(outDir, samples);
    std::printf("wrote %d samples to %s\n", count, outDir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ASSD: attentive single-shot detector, desk scale"};
    app.require_subcommand(1);

    std::string configPath, dataPath, modelPath, imagePath, outPath, query = "0,0";
    std::uint64_t seed = 1;
    int epochs = 60, batch = 8, scale = 1, count = 100, imageSize = 64, maxDets = 200;
    double lr = 1e-3, iouThreshold = 0.5, scoreThreshold = 0.01, nmsThreshold = 0.45;
    bool noAugment = false;

    CLI::App* train = app.add_subcommand("train", "train a model on a dataset manifest");
    train->add_option("--config", configPath)->required();
    train->add_option("--data", dataPath)->required();
    train->add_option("--epochs", epochs);
    train->add_option("--seed", seed);
    train->add_option("--out", outPath)->required();
    train->add_option("--lr", lr);
    train->add_option("--batch", batch);
    train->add_flag("--no-augment", noAugment);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint: per-class AP and mAP");
    eval->add_option("--model", modelPath)->required();
    eval->add_option("--data", dataPath)->required();
    eval->add_option("--iou", iouThreshold);

    CLI::App* detectCmd = app.add_subcommand("detect", "detect objects in a PPM image");
    detectCmd->add_option("--model", modelPath)->required();
    detectCmd->add_option("--image", imagePath)->required();
    detectCmd->add_option("--out", outPath)->required();
    detectCmd->add_option("--score-threshold", scoreThreshold);
    detectCmd->add_option("--nms-threshold", nmsThreshold);
    detectCmd->add_option("--max-dets", maxDets);

    CLI::App* attend = app.add_subcommand("attend", "export an attention heatmap overlay");
    attend->add_option("--model", modelPath)->required();
    attend->add_option("--image", imagePath)->required();
    attend->add_option("--scale", scale)->description("1-based pyramid scale");
    attend->add_option("--query", query)->description("grid location x,y");
    attend->add_option("--out", outPath)->required();

    CLI::App* anchors = app.add_subcommand("anchors", "dump generated anchors as JSON");
    anchors->add_option("--config", configPath)->required();
    anchors->add_option("--out", outPath)->required();

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "verify analytic gradients against finite differences");
    gradcheck->add_option("--seed", seed);

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic shapes dataset");
    synth->add_option("--out", outPath)->required();
    synth->add_option("--n", count);
    synth->add_option("--seed", seed);
    synth->add_option("--image-size", imageSize);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmdTrain(configPath, dataPath, epochs, seed, outPath, lr, batch, !noAugment);
        if (eval->parsed()) return cmdEval(modelPath, dataPath, iouThreshold);
        if (detectCmd->parsed())
            return cmdDetect(modelPath, imagePath, outPath, scoreThreshold, nmsThreshold, maxDets);
        if (attend->parsed()) return cmdAttend(modelPath, imagePath, scale, query, outPath);
        if (anchors->parsed()) return cmdAnchors(configPath, outPath);
        if (gradcheck->parsed()) return cmdGradcheck(seed);
        if (synth->parsed()) return cmdSynth(outPath, count, seed, imageSize);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
