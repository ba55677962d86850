#pragma once

#include <cstdint>
#include <vector>

#include "gseg/tensor.hpp"

namespace gseg {

// Integer label volume over a spatial grid (no batch or channel axes).
struct LabelGrid {
  Shape shape;
  std::vector<std::uint8_t> labels;

  LabelGrid() = default;
  explicit LabelGrid(Shape s, std::uint8_t fill = 0)
      : shape(std::move(s)), labels(static_cast<std::size_t>(element_count(shape)), fill) {
    validate_shape(shape);
  }

  std::size_t size() const noexcept { return labels.size(); }
  std::uint8_t& operator[](std::size_t i) { return labels[i]; }
  std::uint8_t operator[](std::size_t i) const { return labels[i]; }

  friend bool operator==(const LabelGrid&, const LabelGrid&) = default;
};

}  // namespace gseg
