#pragma once

#include <string>
#include <vector>

#include "fbc/tensor.hpp"

namespace fbc {

// A named leaf tensor of a module: either a learnable parameter or a
// non-learnable buffer (batch-norm running statistics).
template <class T>
struct ParamEntry {
    std::string name;
    TensorPtr<T> tensor;
    bool is_buffer = false;
};

template <class T>
using ParamList = std::vector<ParamEntry<T>>;

template <class T>
std::int64_t learnable_count(const ParamList<T>& params) {
    std::int64_t total = 0;
    for (const auto& p : params) {
        if (!p.is_buffer) {
            total += p.tensor->size();
        }
    }
    return total;
}

template <class T>
void zero_all_grads(const ParamList<T>& params) {
    for (const auto& p : params) {
        p.tensor->zero_grad();
    }
}

// Deep copy of parameter values, used for checkpoints.
template <class T>
std::vector<std::vector<T>> snapshot_values(const ParamList<T>& params) {
    std::vector<std::vector<T>> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        out.push_back(p.tensor->data);
    }
    return out;
}

template <class T>
void restore_values(const ParamList<T>& params, const std::vector<std::vector<T>>& values) {
    if (params.size() != values.size()) {
        throw ShapeError("restore_values: snapshot does not match parameter list");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].tensor->data.size() != values[i].size()) {
            throw ShapeError("restore_values: size mismatch for " + params[i].name);
        }
        params[i].tensor->data = values[i];
    }
}

}  // namespace fbc
