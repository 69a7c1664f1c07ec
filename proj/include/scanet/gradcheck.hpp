#pragma once

#include <cmath>
#include <functional>
#include <string>

#include <vector>

#include "scanet/rng.hpp"

#include "scanet/tape.hpp"

namespace scanet {

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every
/// coordinate i of x. Throws Error(numeric) naming the coordinate if f is
/// non-finite there.
template <typename S>
Tensor<S> finite_diff_grad(const std::function<S(const Tensor<S>&)>& f, const Tensor<S>& x, S eps) {
    require(eps > S(0), ErrorKind::numeric, "finite_diff_grad: eps must be positive");
    Tensor<S> probe = x;
    Tensor<S> grad(x.shape());
    for (Index i = 0; i < x.size(); ++i) {
        const S orig = probe[i];
        probe[i] = orig + eps;
        const S up = f(probe);
        probe[i] = orig - eps;
        const S down = f(probe);
        probe[i] = orig;
        require(std::isfinite(up) && std::isfinite(down), ErrorKind::numeric,
                "finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
        grad[i] = (up - down) / (S(2) * eps);
    }
    return grad;
}

/// max_i |a_i - n_i| / max(1, |a_i|).
template <typename S>
double max_rel_error(const Tensor<S>& analytic, const Tensor<S>& numeric) {
    require(analytic.shape() == numeric.shape(), ErrorKind::shape, "max_rel_error: shape mismatch");
    double worst = 0.0;
    for (Index i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        worst = std::max(worst, std::abs(a - n) / std::max(1.0, std::abs(a)));
    }
    return worst;
}

template <typename S>
using GraphFn = std::function<Var<S>(Tape<S>&, const std::vector<Var<S>>&)>;

/// Builds `graph` on fresh tapes: once with every input as a gradient leaf to
/// get reverse-mode gradients, then repeatedly with constants for central
/// differences. Returns the worst max_rel_error over all inputs.
template <typename S>
double check_graph_gradients(const GraphFn<S>& graph, const std::vector<Tensor<S>>& inputs, S eps = S(1e-5)) {
    std::vector<Tensor<S>> analytic;
    {
        Tape<S> tape;
        std::vector<Var<S>> vars;
        for (const auto& x : inputs) vars.push_back(tape.input(x));
        tape.backward(graph(tape, vars));
        for (const auto& v : vars) analytic.push_back(tape.grad(v));
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto f = [&](const Tensor<S>& probe) {
            Tape<S> tape;
            std::vector<Var<S>> vars;
            for (std::size_t j = 0; j < inputs.size(); ++j)
                vars.push_back(tape.constant(j == k ? probe : inputs[j]));
            return graph(tape, vars).value().item();
        };
        worst = std::max(worst, max_rel_error(analytic[k], finite_diff_grad<S>(f, inputs[k], eps)));
    }
    return worst;
}

struct GradientReport {
    std::string name;  // parameter name, or "input"
    double worst = 0.0;
    Index checked = 0;  // coordinates compared
};

/// Compares reverse-mode gradients of `loss(tape, input)` against central
/// differences for the input and every parameter in `params`. With
/// `max_coords > 0` only that many randomly drawn coordinates per tensor are
/// probed (spot check); otherwise every coordinate is.
template <typename S>
std::vector<GradientReport> check_model_gradients(ParameterSet<S>& params,
                                                  const std::function<Var<S>(Tape<S>&, Var<S>)>& loss,
                                                  const Tensor<S>& input, S eps = S(1e-5), Index max_coords = 0,
                                                  std::uint64_t seed = 0) {
    params.zero_grad();
    Tensor<S> input_grad;
    {
        Tape<S> tape;
        auto x = tape.input(input);
        tape.backward(loss(tape, x));
        input_grad = tape.grad(x);
    }
    auto evaluate = [&](const Tensor<S>& in) {
        Tape<S> tape;
        return loss(tape, tape.constant(in)).value().item();
    };
    SplitMix64 rng(seed);
    auto coords = [&](Index size) {
        std::vector<Index> idx;
        if (max_coords <= 0 || max_coords >= size) {
            for (Index i = 0; i < size; ++i) idx.push_back(i);
        } else {
            for (Index i = 0; i < max_coords; ++i) idx.push_back(rng.integer(0, size - 1));
        }
        return idx;
    };
    auto probe = [&](Tensor<S>& target, const Tensor<S>& analytic, const Tensor<S>& in, const std::string& name) {
        GradientReport r{name, 0.0, 0};
        for (Index i : coords(target.size())) {
            const S orig = target[i];
            target[i] = orig + eps;
            const S up = evaluate(in);
            target[i] = orig - eps;
            const S down = evaluate(in);
            target[i] = orig;
            require(std::isfinite(up) && std::isfinite(down), ErrorKind::numeric,
                    "non-finite evaluation at coordinate " + std::to_string(i) + " of " + name);
            const double a = analytic[i], n = (up - down) / (S(2) * eps);
            r.worst = std::max(r.worst, std::abs(a - n) / std::max(1.0, std::abs(a)));
            ++r.checked;
        }
        return r;
    };
    std::vector<GradientReport> out;
    Tensor<S> in = input;
    out.push_back(probe(in, input_grad, in, "input"));
    for (auto& p : params) out.push_back(probe(p.value, p.grad, in, p.name));
    return out;
}

} // namespace scanet
