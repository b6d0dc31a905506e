#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace semcom {

/// H x W x C image, interleaved (HWC), values nominally in [0, 1].
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels, float fill = 0.0f);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& at(int y, int x, int c) noexcept { return data_[index(y, x, c)]; }
  float at(int y, int x, int c) const noexcept { return data_[index(y, x, c)]; }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  bool same_shape(const ImageTensor& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  void clamp01() noexcept;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Per-pixel importance in [0, 1] for a query.
struct ImportanceMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;
  std::string query;

  float at(int y, int x) const noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, bool fill = false);
  BinaryMask(int height, int width, std::vector<std::uint8_t> bits);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept { return bits_.size(); }

  bool at(int y, int x) const noexcept { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool on) noexcept { bits_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0; }

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::size_t count() const noexcept;
  /// Fraction of pixels set: count / (H * W).
  double area_ratio() const noexcept;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

// PNG I/O. Grayscale PNGs load as single-channel images.
ImageTensor read_png(const std::filesystem::path& path);
ImageTensor decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const ImageTensor& image);
std::vector<std::uint8_t> encode_png(const ImageTensor& image);

ImageTensor mask_to_image(const BinaryMask& mask);
/// Pixels with value >= 0.5 (channel mean) are set.
BinaryMask image_to_mask(const ImageTensor& image);

}  // namespace semcom
