#pragma once

#include <utility>
#include <vector>

#include "assd/detector.hpp"

namespace assd {

// SGD with momentum and L2 weight decay; the paper's training settings
// (momentum 0.9, decay 5e-4, initial lr 1e-3) are the defaults.
struct OptimizerState {
    double learningRate = 1e-3;
    double momentum = 0.9;
    double weightDecay = 5e-4;
    std::vector<std::pair<int, double>> schedule; // (epoch, lr multiplier), applied at epoch start
    ModelParams velocity;
};

OptimizerState makeOptimizer(const ModelParams& params, double learningRate = 1e-3,
                             double momentum = 0.9, double weightDecay = 5e-4,
                             std::vector<std::pair<int, double>> schedule = {});

// g' = g + wd*theta; v = momentum*v + g'; theta -= lr*v
void sgdStepTensor(Tensor& theta, const Tensor& grad, Tensor& velocity, double lr,
                   double momentum, double weightDecay);
void sgdStep(ModelParams& params, const ModelParams& grads, OptimizerState& state);

// folds any schedule entries for this epoch into the learning rate
void applySchedule(OptimizerState& state, int epoch);

} // namespace assd
