#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "eva/tensor.hpp"

namespace eva::ag {

using ParamId = std::size_t;

struct Param {
    std::string name;
    Tensor value;
    bool trainable = true;
};

// Named tensors in registration order. Trainable flags partition the store
// into optimizable parameters and frozen base weights.
class ParameterStore {
  public:
    ParamId add(std::string name, Tensor value, bool trainable) {
        if (index_.count(name)) throw std::invalid_argument("ParameterStore: duplicate name " + name);
        value.requires_grad = trainable;
        ParamId id = params_.size();
        index_.emplace(name, id);
        params_.push_back(Param{std::move(name), std::move(value), trainable});
        return id;
    }

    Param& at(ParamId id) { return params_.at(id); }
    const Param& at(ParamId id) const { return params_.at(id); }

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    ParamId id_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("ParameterStore: unknown name " + name);
        return it->second;
    }

    std::size_t count() const { return params_.size(); }

    std::size_t trainable_scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p.trainable) n += p.value.size();
        return n;
    }

    std::vector<Param>::iterator begin() { return params_.begin(); }
    std::vector<Param>::iterator end() { return params_.end(); }
    std::vector<Param>::const_iterator begin() const { return params_.begin(); }
    std::vector<Param>::const_iterator end() const { return params_.end(); }

  private:
    std::vector<Param> params_;
    std::unordered_map<std::string, ParamId> index_;
};

// Gradient map keyed by parameter name; absent entries read as zeros.
class Gradients {
  public:
    void set(const std::string& name, Tensor g) { grads_[name] = std::move(g); }

    bool has(const std::string& name) const { return grads_.count(name) != 0; }

    Tensor get(const std::string& name, const Shape& shape) const {
        auto it = grads_.find(name);
        if (it == grads_.end()) return Tensor::zeros(shape);
        return it->second;
    }

    const std::unordered_map<std::string, Tensor>& map() const { return grads_; }

  private:
    std::unordered_map<std::string, Tensor> grads_;
};

}  // namespace eva::ag
