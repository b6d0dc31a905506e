#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "semcom/image.hpp"

namespace semcom::guidance {

enum class BackendKind { Oracle, Synthetic, External };

std::string_view backend_name(BackendKind kind) noexcept;
std::optional<BackendKind> parse_backend(std::string_view name) noexcept;

struct GuidanceRequest {
  const ImageTensor& image;
  std::string query;
  /// Dataset sample id; the oracle backend keys its lookup on it.
  std::optional<std::string> sample_id;
};

/// Produces a per-pixel importance map for an (image, text query) pair.
class GuidanceBackend {
 public:
  virtual ~GuidanceBackend() = default;
  virtual BackendKind kind() const noexcept = 0;
  virtual ImportanceMap importance_map(const GuidanceRequest& request) const = 0;
};

/// Ground-truth annotation lookup by sample id.
class OracleBackend final : public GuidanceBackend {
 public:
  void add(const std::string& sample_id, BinaryMask mask);
  BackendKind kind() const noexcept override { return BackendKind::Oracle; }
  /// Throws AnnotationMissing when the sample has no annotation.
  ImportanceMap importance_map(const GuidanceRequest& request) const override;
  std::size_t size() const noexcept { return annotations_.size(); }

 private:
  std::map<std::string, BinaryMask> annotations_;
};

/// Pixel-level segmenter for procedural shape scenes. Color words select a
/// palette entry; a bare shape word selects the palette entry whose largest
/// region classifies as that shape.
class SyntheticBackend final : public GuidanceBackend {
 public:
  BackendKind kind() const noexcept override { return BackendKind::Synthetic; }
  ImportanceMap importance_map(const GuidanceRequest& request) const override;
};

/// Client for a text-conditioned segmentation service.
///
/// Wire format: `POST <path>` with a multipart/form-data body holding `image`
/// (PNG bytes, image/png) and `query` (UTF-8 text). The reply body is a
/// grayscale PNG heatmap with the same width and height as the image.
class ExternalBackend final : public GuidanceBackend {
 public:
  ExternalBackend(std::string host, int port, std::string path = "/heatmap", double timeout_s = 5.0);
  BackendKind kind() const noexcept override { return BackendKind::External; }
  /// Throws BackendUnavailable when the service cannot be reached or replies badly.
  ImportanceMap importance_map(const GuidanceRequest& request) const override;

 private:
  std::string host_;
  int port_;
  std::string path_;
  double timeout_s_;
};

/// mask[p] = 1 iff map[p] >= threshold; threshold must lie in (0, 1).
BinaryMask binarize(const ImportanceMap& map, double threshold = 0.5);

inline constexpr double kMaskAreaLo = 0.10;
inline constexpr double kMaskAreaHi = 0.40;

/// lo <= area_ratio <= hi, bounds inclusive.
bool mask_filter(const BinaryMask& mask, double lo = kMaskAreaLo, double hi = kMaskAreaHi);

/// Stub segmentation service speaking the ExternalBackend wire format. Replies
/// with a constant heatmap, or with the synthetic segmenter when `constant` is empty.
class StubServer {
 public:
  explicit StubServer(std::optional<double> constant = 0.5);
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks serving on the calling thread.
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace semcom::guidance
