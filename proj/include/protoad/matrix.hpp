#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "protoad/error.hpp"

namespace protoad {

/// Read-only view of a row-major rows×cols float matrix.
struct RowsView {
    std::span<const float> data;
    std::size_t rows = 0;
    std::size_t cols = 0;

    RowsView() = default;
    RowsView(std::span<const float> d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {
        if (d.size() != r * c)
            throw InvalidArgument("matrix view of " + std::to_string(d.size()) +
                                  " values cannot be " + std::to_string(r) + "x" +
                                  std::to_string(c));
    }

    std::span<const float> row(std::size_t i) const { return data.subspan(i * cols, cols); }
};

/// Owning row-major matrix.
struct RowMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    RowMatrix() = default;
    RowMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    std::span<float> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const float> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    RowsView view() const { return {data, rows, cols}; }

    friend bool operator==(const RowMatrix&, const RowMatrix&) = default;
};

}  // namespace protoad
