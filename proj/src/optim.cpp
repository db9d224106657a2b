#include "assd/optim.hpp"

#include <stdexcept>

namespace assd {

OptimizerState makeOptimizer(const ModelParams& params, double learningRate, double momentum,
                             double weightDecay, std::vector<std::pair<int, double>> schedule) {
    OptimizerState s;
    s.learningRate = learningRate;
    s.momentum = momentum;
    s.weightDecay = weightDecay;
    s.schedule = std::move(schedule);
    s.velocity = makeZeroGrads(params);
    return s;
}

void sgdStepTensor(Tensor& theta, const Tensor& grad, Tensor& velocity, double lr,
                   double momentum, double weightDecay) {
    if (!theta.sameShape(grad) || !theta.sameShape(velocity))
        throw std::invalid_argument("sgdStep: shape mismatch " + theta.shapeStr() + " vs " + grad.shapeStr());
    double* t = theta.data();
    const double* g = grad.data();
    double* v = velocity.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double adjusted = g[i] + weightDecay * t[i];
        v[i] = momentum * v[i] + adjusted;
        t[i] -= lr * v[i];
    }
}

void sgdStep(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
    auto pt = learnableTensors(params);
    auto gt = learnableTensors(const_cast<ModelParams&>(grads));
    auto vt = learnableTensors(state.velocity);
    if (pt.size() != gt.size() || pt.size() != vt.size())
        throw std::invalid_argument("sgdStep: parameter/gradient structures disagree");
    for (std::size_t i = 0; i < pt.size(); ++i) {
        if (pt[i].first != gt[i].first)
            throw std::invalid_argument("sgdStep: tensor order mismatch at " + pt[i].first);
        sgdStepTensor(*pt[i].second, *gt[i].second, *vt[i].second, state.learningRate,
                      state.momentum, state.weightDecay);
    }
}

void applySchedule(OptimizerState& state, int epoch) {
    for (const auto& [at, mult] : state.schedule)
        if (at == epoch) state.learningRate *= mult;
}

} // namespace assd
