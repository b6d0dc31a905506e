#include "semcom/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "semcom/error.hpp"
#include "semcom/rng.hpp"

namespace semcom::synthetic {

std::string_view shape_name(ShapeKind kind) noexcept {
  switch (kind) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
  }
  return "circle";
}

std::optional<ShapeKind> parse_shape(std::string_view name) noexcept {
  for (ShapeKind kind : kShapeKinds) {
    if (shape_name(kind) == name) return kind;
  }
  return std::nullopt;
}

const std::vector<PaletteColor>& palette() {
  static const std::vector<PaletteColor> colors = {
      {"red", {0.90f, 0.12f, 0.10f}},  {"green", {0.10f, 0.75f, 0.15f}},
      {"blue", {0.12f, 0.20f, 0.90f}}, {"yellow", {0.92f, 0.85f, 0.10f}},
      {"magenta", {0.85f, 0.10f, 0.80f}}, {"cyan", {0.10f, 0.80f, 0.85f}},
  };
  return colors;
}

std::optional<std::size_t> find_color(std::string_view name) noexcept {
  const auto& colors = palette();
  for (std::size_t i = 0; i < colors.size(); ++i) {
    if (colors[i].name == name) return i;
  }
  return std::nullopt;
}

namespace {

bool inside(ShapeKind kind, double px, double py, double cx, double cy, double s) {
  switch (kind) {
    case ShapeKind::Circle: return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= s * s;
    case ShapeKind::Square: return std::abs(px - cx) <= s && std::abs(py - cy) <= s;
    case ShapeKind::Triangle: {
      const double top = cy - s;
      if (py < top || py > cy + s) return false;
      const double t = (py - top) / (2.0 * s);
      return std::abs(px - cx) <= t * s;
    }
  }
  return false;
}

}  // namespace

Sample generate_scene(std::uint64_t seed, std::uint64_t index, const SceneOptions& options) {
  const int n = options.size;
  CounterRng rng(seed, index);
  const auto& colors = palette();
  for (;;) {
    const double gray = rng.uniform(0.35, 0.6);
    const double freq = rng.uniform(0.1, 0.4);
    const double phase = rng.uniform(0.0, 6.28);
    const double angle = rng.uniform(0.0, 3.14);
    ImageTensor image(n, n, 3);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double stripe =
            gray + 0.05 * std::sin(freq * (std::cos(angle) * x + std::sin(angle) * y) + phase);
        for (int c = 0; c < 3; ++c) image.at(y, x, c) = static_cast<float>(stripe + 0.02 * rng.normal());
      }
    }
    const int count = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(options.max_shapes)));
    // Distinct colors per scene so a color query names one shape.
    std::vector<std::size_t> order(colors.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    std::vector<BinaryMask> masks;
    std::vector<ShapeKind> kinds;
    for (int k = 0; k < count; ++k) {
      const ShapeKind kind = kShapeKinds[rng.below(kShapeKinds.size())];
      const double s = rng.uniform(8.0, 20.0);
      const double cx = rng.uniform(s, n - s);
      const double cy = rng.uniform(s, n - s);
      BinaryMask mask(n, n);
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          if (!inside(kind, x + 0.5, y + 0.5, cx, cy, s)) continue;
          mask.set(y, x, true);
          for (auto& earlier : masks) earlier.set(y, x, false);
          for (int c = 0; c < 3; ++c) image.at(y, x, c) = colors[order[k]].rgb[c];
        }
      }
      masks.push_back(std::move(mask));
      kinds.push_back(kind);
    }
    std::size_t target = 0;
    for (std::size_t k = 1; k < masks.size(); ++k) {
      if (masks[k].count() > masks[target].count()) target = k;
    }
    const double area = masks[target].area_ratio();
    if (area < options.min_area || area > options.max_area) continue;

    image.clamp01();
    Sample sample;
    std::ostringstream id;
    id << index;
    sample.id = id.str();
    sample.image = std::move(image);
    sample.mask = std::move(masks[target]);
    sample.shape = kinds[target];
    sample.color = order[target];
    sample.query = "the " + std::string(colors[sample.color].name) + " " + std::string(shape_name(sample.shape));
    return sample;
  }
}

std::vector<Sample> generate_synthetic(int n, std::uint64_t seed, const SceneOptions& options) {
  if (n < 1) throw Error(Errc::ConfigError, "dataset size must be at least 1");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(generate_scene(seed, static_cast<std::uint64_t>(i), options));
  return out;
}

Query parse_query(std::string_view text) {
  Query query;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (auto c = find_color(word)) query.color = c;
    if (auto s = parse_shape(word)) query.shape = s;
    word.clear();
  };
  for (char ch : text) {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else {
      flush();
    }
  }
  flush();
  return query;
}

std::vector<float> color_importance(const ImageTensor& image, std::size_t color) {
  constexpr float kFull = 0.1f;
  constexpr float kZero = 0.5f;
  const auto& rgb = palette().at(color).rgb;
  std::vector<float> out(static_cast<std::size_t>(image.height()) * image.width());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      float sq = 0.0f;
      for (int c = 0; c < 3; ++c) {
        const float d = image.at(y, x, std::min(c, image.channels() - 1)) - rgb[c];
        sq += d * d;
      }
      const float dist = std::sqrt(sq);
      out[static_cast<std::size_t>(y) * image.width() + x] =
          std::clamp((kZero - dist) / (kZero - kFull), 0.0f, 1.0f);
    }
  }
  return out;
}

std::optional<Component> largest_component(const ImageTensor& image, std::optional<std::size_t> color) {
  constexpr float kMinSaturation = 0.3f;
  const int h = image.height();
  const int w = image.width();
  if (image.channels() < 3) return std::nullopt;
  const auto& colors = palette();
  std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float r = image.at(y, x, 0), g = image.at(y, x, 1), b = image.at(y, x, 2);
      if (std::max({r, g, b}) - std::min({r, g, b}) <= kMinSaturation) continue;
      float best = 1e9f;
      int best_idx = -1;
      for (std::size_t k = 0; k < colors.size(); ++k) {
        const float dr = r - colors[k].rgb[0], dg = g - colors[k].rgb[1], db = b - colors[k].rgb[2];
        const float d = dr * dr + dg * dg + db * db;
        if (d < best) {
          best = d;
          best_idx = static_cast<int>(k);
        }
      }
      if (!color || static_cast<std::size_t>(best_idx) == *color) {
        label[static_cast<std::size_t>(y) * w + x] = best_idx;
      }
    }
  }
  std::optional<Component> best;
  std::vector<std::uint8_t> seen(label.size(), 0);
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (label[start] < 0 || seen[start]) continue;
    const int col = label[start];
    BinaryMask region(h, w);
    std::size_t area = 0;
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int py = p / w, px = p % w;
      region.set(py, px, true);
      ++area;
      const int nbrs[4][2] = {{py - 1, px}, {py + 1, px}, {py, px - 1}, {py, px + 1}};
      for (const auto& n : nbrs) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const int q = n[0] * w + n[1];
        if (!seen[q] && label[q] == col) {
          seen[q] = 1;
          stack.push_back(q);
        }
      }
    }
    if (!best || area > best->area) {
      best = Component{static_cast<std::size_t>(col), std::move(region), area};
    }
  }
  return best;
}

std::optional<ShapeKind> classify_region(const BinaryMask& region) {
  int y0 = region.height(), y1 = -1, x0 = region.width(), x1 = -1;
  for (int y = 0; y < region.height(); ++y) {
    for (int x = 0; x < region.width(); ++x) {
      if (!region.at(y, x)) continue;
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
    }
  }
  if (y1 < 0) return std::nullopt;
  const int bh = y1 - y0 + 1;
  const int bw = x1 - x0 + 1;
  const int ch = std::max(1, static_cast<int>(std::lround(bh * 0.2)));
  const int cw = std::max(1, static_cast<int>(std::lround(bw * 0.2)));
  auto occupancy = [&](int ya, int xa) {
    int on = 0;
    for (int y = ya; y < ya + ch; ++y)
      for (int x = xa; x < xa + cw; ++x) on += region.at(y, x) ? 1 : 0;
    return static_cast<double>(on) / (ch * cw);
  };
  const double top = 0.5 * (occupancy(y0, x0) + occupancy(y0, x1 - cw + 1));
  const double bottom = 0.5 * (occupancy(y1 - ch + 1, x0) + occupancy(y1 - ch + 1, x1 - cw + 1));
  if (top > 0.35) return ShapeKind::Square;
  if (bottom - top > 0.25) return ShapeKind::Triangle;
  return ShapeKind::Circle;
}

std::optional<ShapeKind> classify_shape(const ImageTensor& image, std::size_t min_area) {
  const auto component = largest_component(image);
  if (!component || component->area < min_area) return std::nullopt;
  return classify_region(component->pixels);
}

}  // namespace semcom::synthetic
