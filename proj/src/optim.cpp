#include "mmg/optim.hpp"

#include "mmg/errors.hpp"

#include <cmath>
#include <string>

namespace mmg {

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
    if (lr < 0.0) throw Error("adam_step: negative learning rate");
    if (!state.initialized()) {
        state.first_moment.reserve(params.size());
        state.second_moment.reserve(params.size());
        for (const Tensor& p : params) {
            state.first_moment.emplace_back(
                Matrix::Zero(p.rows(), p.cols()));
            state.second_moment.emplace_back(
                Matrix::Zero(p.rows(), p.cols()));
        }
    }
    if (state.first_moment.size() != params.size())
        throw ShapeError("adam_step: state tracks " +
                         std::to_string(state.first_moment.size()) +
                         " tensors, got " + std::to_string(params.size()));

    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, state.step_count);
    const double bc2 = 1.0 - std::pow(state.beta2, state.step_count);

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        Matrix& m = state.first_moment[i];
        Matrix& v = state.second_moment[i];
        if (m.rows() != p.rows() || m.cols() != p.cols())
            throw ShapeError("adam_step: moment shape " +
                             std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) +
                             " does not match parameter " +
                             std::to_string(p.rows()) + "x" +
                             std::to_string(p.cols()));
        const Matrix& g = p.grad();
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
        const Matrix mhat = m / bc1;
        const Matrix vhat = v / bc2;
        p.leaf_value() -=
            lr * mhat.cwiseQuotient(
                     (vhat.cwiseSqrt().array() + state.epsilon).matrix());
    }
}

double lr_at(const LrSchedule& s, int epoch) {
    if (s.warmup_epochs < 0 || s.total_epochs <= s.warmup_epochs)
        throw ConfigError("lr_at: need 0 <= warmup < total epochs");
    if (epoch < 0 || epoch >= s.total_epochs)
        throw ConfigError("lr_at: epoch " + std::to_string(epoch) +
                          " outside [0, " + std::to_string(s.total_epochs) +
                          ")");
    if (epoch < s.warmup_epochs) {
        const double w = static_cast<double>(s.warmup_epochs);
        return s.base_lr * (1.0 + epoch * (w - 1.0) / w) / w;
    }
    const double span =
        static_cast<double>(s.total_epochs - s.warmup_epochs);
    const double t = static_cast<double>(epoch - s.warmup_epochs);
    constexpr double kPi = 3.14159265358979323846;
    return s.base_lr * 0.5 * (1.0 + std::cos(kPi * t / span));
}

} // namespace mmg
