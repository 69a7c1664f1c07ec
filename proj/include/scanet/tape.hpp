#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "scanet/tensor.hpp"

namespace scanet {

/// A named learnable tensor and its accumulated gradient.
template <typename Scalar>
struct Parameter {
    std::string name;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;

    Parameter(std::string n, Tensor<Scalar> v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

/// Owns the parameters of one model. Element addresses are stable (deque), so
/// blocks hold plain pointers into it. Iteration order is registration order.
template <typename Scalar>
class ParameterSet {
public:
    Parameter<Scalar>& add(const std::string& name, Tensor<Scalar> value) {
        require(!index_.count(name), ErrorKind::config, "duplicate parameter name '" + name + "'");
        params_.emplace_back(name, std::move(value));
        index_[name] = params_.size() - 1;
        return params_.back();
    }

    Parameter<Scalar>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }
    const Parameter<Scalar>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }

    std::size_t size() const { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    Index scalar_count() const {
        Index n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.grad.set_zero();
    }

private:
    std::deque<Parameter<Scalar>> params_;
    std::map<std::string, std::size_t> index_;
};

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
struct Var {
    Tape<Scalar>* tape = nullptr;
    int id = -1;

    const Tensor<Scalar>& value() const { return tape->value(*this); }
    const Shape& shape() const { return tape->value(*this).shape(); }
    Index dim(int axis) const { return shape()[axis]; }
    bool valid() const { return tape != nullptr; }
};

/// Linear record of executed primitives. Nodes are appended in execution
/// order, which is a topological order, so backward() is a single reverse
/// sweep that visits each node once.
template <typename Scalar>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor<Scalar>& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives a gradient (data, targets).
    Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), false, nullptr, {}); }

    /// Leaf whose gradient is kept after backward() and readable via grad().
    Var<Scalar> input(Tensor<Scalar> value) { return push(std::move(value), true, nullptr, {}); }

    /// Leaf bound to a parameter; backward() accumulates into param.grad.
    Var<Scalar> param(Parameter<Scalar>& p) {
        auto v = push(p.value, true, nullptr, {});
        nodes_[v.id].param = &p;
        return v;
    }

    /// Appends the result of a primitive. `backward` runs only if some input
    /// requires a gradient.
    Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                       BackwardFn backward) {
        return record(std::move(value), std::vector<Var<Scalar>>(inputs), std::move(backward));
    }
    Var<Scalar> record(Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs,
                       BackwardFn backward) {
        bool needs = false;
        for (const auto& v : inputs) {
            require(v.tape == this, ErrorKind::shape, "input recorded on a different tape");
            needs = needs || nodes_[v.id].needs_grad;
        }
        auto out = push(std::move(value), needs, needs ? std::move(backward) : nullptr, {});
        nodes_[out.id].leaf = false;
        return out;
    }

    const Tensor<Scalar>& value(Var<Scalar> v) const { return nodes_[v.id].value; }
    bool needs_grad(Var<Scalar> v) const { return nodes_[v.id].needs_grad; }

    /// Gradient buffer of `v`, zero-initialised on first access. Backward rules
    /// accumulate into it with +=.
    Tensor<Scalar>& grad_acc(Var<Scalar> v) {
        auto& node = nodes_[v.id];
        if (node.grad.empty()) node.grad = Tensor<Scalar>(node.value.shape());
        return node.grad;
    }

    /// Gradient of an input() leaf after backward(); zeros if unreached.
    Tensor<Scalar> grad(Var<Scalar> v) const {
        const auto& node = nodes_[v.id];
        return node.grad.empty() ? Tensor<Scalar>(node.value.shape()) : node.grad;
    }

    /// Reverse sweep from a scalar loss. Parameter gradients are added to
    /// Parameter::grad; intermediate values and gradients are released, except
    /// the value of `loss` itself.
    void backward(Var<Scalar> loss) {
        require(value(loss).size() == 1, ErrorKind::shape,
                "backward() needs a scalar loss, got " + value(loss).shape().str());
        grad_acc(loss)[0] = Scalar(1);
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
            auto& node = nodes_[id];
            if (id <= loss.id && !node.grad.empty()) {
                if (node.backward) node.backward(*this, node.grad);
                if (node.param) node.param->grad.vec() += node.grad.vec();
            }
            // Consumers have higher ids and are already done with this node.
            if (!node.leaf || node.param) {
                if (id != loss.id) node.value = Tensor<Scalar>();
                node.grad = Tensor<Scalar>();
                node.backward = nullptr;
            }
        }
    }

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<Scalar> value;
        Tensor<Scalar> grad;
        BackwardFn backward;
        Parameter<Scalar>* param = nullptr;
        bool needs_grad = false;
        bool leaf = true;
    };

    Var<Scalar> push(Tensor<Scalar> value, bool needs_grad, BackwardFn fn, Tensor<Scalar> grad) {
        nodes_.push_back(Node{std::move(value), std::move(grad), std::move(fn), nullptr, needs_grad, true});
        return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
    }

    std::deque<Node> nodes_;
};

} // namespace scanet
