#pragma once

#include <cmath>
#include <compare>
#include <cstddef>
#include <string>
#include <vector>

#include "metareg/error.hpp"

namespace metareg {

// One fully connected layer: weights are flattened row-major with rows
// indexed by output unit (weight (o, i) sits at o * input_dim + i), followed
// by the bias vector when present.
struct LayerShape {
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    bool has_bias = true;

    std::size_t size() const { return input_dim * output_dim + (has_bias ? output_dim : 0); }
    bool operator==(const LayerShape&) const = default;
};

using Layout = std::vector<LayerShape>;

inline std::size_t layout_size(const Layout& layout) {
    std::size_t n = 0;
    for (const auto& l : layout) n += l.size();
    return n;
}

// Flattened network parameters plus the layer layout that fixes the
// flattening order. All arithmetic on parameters is elementwise over
// `values`; the layout is carried for shape checking.
struct ParameterVector {
    std::vector<double> values;
    Layout layout;

    std::size_t size() const { return values.size(); }
    bool operator==(const ParameterVector&) const = default;
};

inline ParameterVector zeros_like(const Layout& layout) {
    return ParameterVector{std::vector<double>(layout_size(layout), 0.0), layout};
}

inline bool same_layout(const ParameterVector& a, const ParameterVector& b) {
    return a.layout == b.layout && a.values.size() == b.values.size();
}

inline void require_layout(const ParameterVector& p, const Layout& expected,
                           const std::string& context) {
    if (p.layout != expected || p.values.size() != layout_size(expected)) {
        throw Error(context + ": parameter layout does not match network spec (" +
                    std::to_string(p.values.size()) + " values, expected " +
                    std::to_string(layout_size(expected)) + ")");
    }
}

inline void require_same_layout(const ParameterVector& a, const ParameterVector& b,
                                const std::string& context) {
    if (!same_layout(a, b)) throw Error(context + ": mismatched parameter layouts");
}

inline bool all_finite(const ParameterVector& p) {
    for (double v : p.values)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace metareg
