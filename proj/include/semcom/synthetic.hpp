#pragma once

// Procedural shape scenes: flat-colored circles, squares and triangles on a
// striped gray background, with exact masks and text queries.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "semcom/image.hpp"

namespace semcom::synthetic {

enum class ShapeKind { Circle, Square, Triangle };

inline constexpr std::array<ShapeKind, 3> kShapeKinds = {ShapeKind::Circle, ShapeKind::Square,
                                                         ShapeKind::Triangle};

std::string_view shape_name(ShapeKind kind) noexcept;
std::optional<ShapeKind> parse_shape(std::string_view name) noexcept;

struct PaletteColor {
  std::string_view name;
  std::array<float, 3> rgb;
};

const std::vector<PaletteColor>& palette();
std::optional<std::size_t> find_color(std::string_view name) noexcept;

struct Sample {
  std::string id;
  ImageTensor image;
  BinaryMask mask;  // visible pixels of the queried shape
  std::string query;
  ShapeKind shape = ShapeKind::Circle;
  std::size_t color = 0;  // palette index
};

struct SceneOptions {
  int size = 64;
  int max_shapes = 3;
  double min_area = 0.10;
  double max_area = 0.40;
};

/// Scene `index` of the stream keyed by `seed`; independent of every other index.
Sample generate_scene(std::uint64_t seed, std::uint64_t index, const SceneOptions& options = {});
std::vector<Sample> generate_synthetic(int n, std::uint64_t seed, const SceneOptions& options = {});

/// Parsed "the [color] [shape]" query; either part may be missing.
struct Query {
  std::optional<std::size_t> color;
  std::optional<ShapeKind> shape;
};
Query parse_query(std::string_view text);

/// Soft color-match importance against palette entry `color`: 1 within 0.1 of
/// the palette value (Euclidean RGB), 0 beyond 0.5, linear between.
std::vector<float> color_importance(const ImageTensor& image, std::size_t color);

struct Component {
  std::size_t color = 0;
  BinaryMask pixels;
  std::size_t area = 0;
};

/// Largest 4-connected region of saturated pixels sharing a nearest palette color.
/// With `color` set, only that palette entry is considered.
std::optional<Component> largest_component(const ImageTensor& image,
                                           std::optional<std::size_t> color = std::nullopt);

/// Classify a region by bounding-box corner occupancy: filled top corners mean a
/// square, empty top with filled bottom a triangle, otherwise a circle.
std::optional<ShapeKind> classify_region(const BinaryMask& region);

/// Shape of the largest saturated region, if one of at least `min_area` pixels exists.
std::optional<ShapeKind> classify_shape(const ImageTensor& image, std::size_t min_area = 30);

}  // namespace semcom::synthetic
