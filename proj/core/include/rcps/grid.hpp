#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rcps/error.hpp"

namespace rcps {

/// Extents of a 3D grid. Storage is x-fastest (NIfTI order): index = x + nx*(y + ny*z).
struct Shape3 {
    std::int64_t nx = 1;
    std::int64_t ny = 1;
    std::int64_t nz = 1;

    std::int64_t operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
    std::int64_t& operator[](int axis) { return axis == 0 ? nx : axis == 1 ? ny : nz; }
    std::size_t voxels() const { return static_cast<std::size_t>(nx * ny * nz); }
    bool valid() const { return nx >= 1 && ny >= 1 && nz >= 1; }
    std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const
    {
        return static_cast<std::size_t>(x + nx * (y + ny * z));
    }
    std::string str() const
    {
        return "(" + std::to_string(nx) + "," + std::to_string(ny) + "," + std::to_string(nz) + ")";
    }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

using Index3 = std::array<std::int64_t, 3>;

/// Dense 3D grid of values in x-fastest order.
template <typename T>
struct Grid {
    Shape3 shape;
    std::vector<T> values;

    Grid() = default;
    explicit Grid(Shape3 s, T fill = T{}) : shape(s), values(s.voxels(), fill)
    {
        if (!s.valid())
            throw ShapeError("grid extents must be >= 1, got " + s.str());
    }

    T& operator()(std::int64_t x, std::int64_t y, std::int64_t z) { return values[shape.index(x, y, z)]; }
    const T& operator()(std::int64_t x, std::int64_t y, std::int64_t z) const
    {
        return values[shape.index(x, y, z)];
    }
    std::size_t size() const { return values.size(); }
    friend bool operator==(const Grid&, const Grid&) = default;
};

} // namespace rcps
