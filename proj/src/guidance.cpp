#include "semcom/guidance.hpp"

#include <httplib.h>

#include <algorithm>
#include <thread>

#include "semcom/error.hpp"
#include "semcom/synthetic.hpp"

namespace semcom::guidance {

std::string_view backend_name(BackendKind kind) noexcept {
  switch (kind) {
    case BackendKind::Oracle: return "oracle";
    case BackendKind::Synthetic: return "synthetic";
    case BackendKind::External: return "external";
  }
  return "synthetic";
}

std::optional<BackendKind> parse_backend(std::string_view name) noexcept {
  for (auto kind : {BackendKind::Oracle, BackendKind::Synthetic, BackendKind::External}) {
    if (backend_name(kind) == name) return kind;
  }
  return std::nullopt;
}

void OracleBackend::add(const std::string& sample_id, BinaryMask mask) {
  annotations_.insert_or_assign(sample_id, std::move(mask));
}

ImportanceMap OracleBackend::importance_map(const GuidanceRequest& request) const {
  if (!request.sample_id) throw Error(Errc::AnnotationMissing, "oracle lookup needs a sample id");
  const auto it = annotations_.find(*request.sample_id);
  if (it == annotations_.end()) {
    throw Error(Errc::AnnotationMissing, "no annotation for sample '" + *request.sample_id + "'");
  }
  const BinaryMask& mask = it->second;
  if (mask.height() != request.image.height() || mask.width() != request.image.width()) {
    throw Error(Errc::DimensionMismatch, "annotation size differs from image");
  }
  ImportanceMap map{mask.height(), mask.width(), {}, request.query};
  map.values.reserve(mask.pixel_count());
  for (auto bit : mask.bits()) map.values.push_back(bit ? 1.0f : 0.0f);
  return map;
}

ImportanceMap SyntheticBackend::importance_map(const GuidanceRequest& request) const {
  const ImageTensor& image = request.image;
  ImportanceMap map{image.height(), image.width(), {}, request.query};
  const auto query = synthetic::parse_query(request.query);
  std::optional<std::size_t> color = query.color;
  if (!color && query.shape) {
    std::size_t best_area = 0;
    for (std::size_t k = 0; k < synthetic::palette().size(); ++k) {
      const auto component = synthetic::largest_component(image, k);
      if (!component || component->area < 30) continue;
      if (synthetic::classify_region(component->pixels) == query.shape && component->area > best_area) {
        best_area = component->area;
        color = k;
      }
    }
  }
  if (!color) {
    map.values.assign(static_cast<std::size_t>(image.height()) * image.width(), 0.0f);
    return map;
  }
  map.values = synthetic::color_importance(image, *color);
  return map;
}

ExternalBackend::ExternalBackend(std::string host, int port, std::string path, double timeout_s)
    : host_(std::move(host)), port_(port), path_(std::move(path)), timeout_s_(timeout_s) {}

ImportanceMap ExternalBackend::importance_map(const GuidanceRequest& request) const {
  httplib::Client client(host_, port_);
  const auto timeout = std::chrono::duration<double>(timeout_s_);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  const auto png = encode_png(request.image);
  httplib::MultipartFormDataItems items = {
      {"image", std::string(png.begin(), png.end()), "image.png", "image/png"},
      {"query", request.query, "", "text/plain; charset=utf-8"},
  };
  const auto response = client.Post(path_, items);
  if (!response) {
    throw Error(Errc::BackendUnavailable, "guidance service " + host_ + ":" + std::to_string(port_) +
                                              " unreachable (" + httplib::to_string(response.error()) + ")");
  }
  if (response->status != 200) {
    throw Error(Errc::BackendUnavailable, "guidance service replied HTTP " + std::to_string(response->status));
  }
  ImageTensor heat;
  try {
    const auto& body = response->body;
    heat = decode_png(std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
  } catch (const Error& e) {
    throw Error(Errc::BackendUnavailable, std::string("bad heatmap payload: ") + e.what());
  }
  if (heat.height() != request.image.height() || heat.width() != request.image.width()) {
    throw Error(Errc::BackendUnavailable, "heatmap size differs from image");
  }
  ImportanceMap map{heat.height(), heat.width(), {}, request.query};
  map.values.reserve(static_cast<std::size_t>(heat.height()) * heat.width());
  for (int y = 0; y < heat.height(); ++y) {
    for (int x = 0; x < heat.width(); ++x) {
      float sum = 0.0f;
      for (int c = 0; c < heat.channels(); ++c) sum += heat.at(y, x, c);
      map.values.push_back(sum / static_cast<float>(heat.channels()));
    }
  }
  return map;
}

BinaryMask binarize(const ImportanceMap& map, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(Errc::ConfigError, "binarization threshold must lie in (0, 1)");
  }
  BinaryMask mask(map.height, map.width);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) mask.set(y, x, map.at(y, x) >= threshold);
  return mask;
}

bool mask_filter(const BinaryMask& mask, double lo, double hi) {
  if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) {
    throw Error(Errc::ConfigError, "mask filter bounds must satisfy 0 <= lo < hi <= 1");
  }
  const double area = mask.area_ratio();
  return lo <= area && area <= hi;
}

struct StubServer::Impl {
  std::optional<double> constant;
  httplib::Server server;
  std::thread thread;
};

StubServer::StubServer(std::optional<double> constant) : impl_(std::make_unique<Impl>()) {
  impl_->constant = constant;
  impl_->server.Post("/heatmap", [this](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_file("image")) {
      res.status = 400;
      res.set_content("missing image field", "text/plain");
      return;
    }
    const auto& file = req.get_file_value("image");
    const std::string query = req.has_file("query") ? req.get_file_value("query").content : "";
    try {
      const auto image =
          decode_png(std::span(reinterpret_cast<const std::uint8_t*>(file.content.data()), file.content.size()));
      ImageTensor heat(image.height(), image.width(), 1);
      if (impl_->constant) {
        std::fill(heat.values().begin(), heat.values().end(), static_cast<float>(*impl_->constant));
      } else {
        const auto map = SyntheticBackend{}.importance_map({image, query, std::nullopt});
        std::copy(map.values.begin(), map.values.end(), heat.values().begin());
      }
      const auto png = encode_png(heat);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    }
  });
}

StubServer::~StubServer() { stop(); }

int StubServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(Errc::BackendUnavailable, "cannot bind stub server");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void StubServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error(Errc::BackendUnavailable, "cannot bind stub server");
}

void StubServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace semcom::guidance
