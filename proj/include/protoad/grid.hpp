#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "protoad/error.hpp"

namespace protoad {

/// Row-major 2-D array of scalars (score maps, masks).
template <typename T>
struct Grid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), values(h * w, fill) {}
    Grid(std::size_t h, std::size_t w, std::vector<T> v) : height(h), width(w), values(std::move(v)) {
        if (values.size() != h * w)
            throw InvalidArgument("grid of " + std::to_string(values.size()) + " values cannot be " +
                                  std::to_string(h) + "x" + std::to_string(w));
    }

    T& at(std::size_t i, std::size_t j) { return values[i * width + j]; }
    const T& at(std::size_t i, std::size_t j) const { return values[i * width + j]; }
    std::size_t size() const { return values.size(); }
    bool same_shape(const Grid& o) const { return height == o.height && width == o.width; }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using ScalarMap = Grid<float>;
using Mask = Grid<std::uint8_t>;

}  // namespace protoad
