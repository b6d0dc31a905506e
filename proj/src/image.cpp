#include "semcom/image.hpp"

#include <cmath>
#include <png.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "semcom/error.hpp"

namespace semcom {

ImageTensor::ImageTensor(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw Error(Errc::BadGeometry, "image dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

void ImageTensor::clamp01() noexcept {
  for (float& v : data_) v = std::clamp(v, 0.0f, 1.0f);
}

BinaryMask::BinaryMask(int height, int width, bool fill)
    : height_(height), width_(width),
      bits_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  if (bits_.size() != static_cast<std::size_t>(height) * width) {
    throw Error(Errc::DimensionMismatch, "mask bit count does not match dimensions");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double BinaryMask::area_ratio() const noexcept {
  if (bits_.empty()) return 0.0;
  return static_cast<double>(count()) / static_cast<double>(bits_.size());
}

namespace {

struct PngReadBuffer {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void png_read_from_buffer(png_structp png, png_bytep out, png_size_t length) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->offset + length > buf->bytes.size()) png_error(png, "truncated PNG");
  std::memcpy(out, buf->bytes.data() + buf->offset, length);
  buf->offset += length;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw Error(Errc::IoError, msg); }

void png_warn(png_structp, png_const_charp) {}

}  // namespace

ImageTensor decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw Error(Errc::IoError, "not a PNG stream");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  PngReadBuffer buffer{bytes, 0};
  ImageTensor image;
  try {
    png_set_read_fn(png, &buffer, png_read_from_buffer);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_strip_alpha(png);
    const auto color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
      png_set_expand_gray_1_2_4_to_8(png);
    }
    png_read_update_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height * channels);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * width * channels;
    png_read_image(png, rows.data());
    image = ImageTensor(height, width, channels);
    std::transform(pixels.begin(), pixels.end(), image.values().begin(),
                   [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

ImageTensor read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

std::vector<std::uint8_t> encode_png(const ImageTensor& image) {
  const int channels = image.channels();
  if (channels != 1 && channels != 3) {
    throw Error(Errc::BadGeometry, "PNG export supports 1 or 3 channels");
  }
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
    png_set_IHDR(png, info, image.width(), image.height(), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width()) * channels);
    const auto values = image.values();
    for (int y = 0; y < image.height(); ++y) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        const float v = std::clamp(values[static_cast<std::size_t>(y) * row.size() + i], 0.0f, 1.0f);
        row[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::filesystem::path& path, const ImageTensor& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ImageTensor mask_to_image(const BinaryMask& mask) {
  ImageTensor image(mask.height(), mask.width(), 1);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) image.at(y, x, 0) = mask.at(y, x) ? 1.0f : 0.0f;
  return image;
}

BinaryMask image_to_mask(const ImageTensor& image) {
  BinaryMask mask(image.height(), image.width());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      float sum = 0.0f;
      for (int c = 0; c < image.channels(); ++c) sum += image.at(y, x, c);
      mask.set(y, x, sum / static_cast<float>(image.channels()) >= 0.5f);
    }
  }
  return mask;
}

}  // namespace semcom
