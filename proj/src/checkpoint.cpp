#include "semcom/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "semcom/error.hpp"

namespace semcom {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error(Errc::IoError, "truncated checkpoint");
  return v;
}

}  // namespace

const nn::Matrix& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw Error(Errc::IoError, "checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const noexcept {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& header, const nn::ParamList& params) {
  nlohmann::json full = header;
  nlohmann::json directory = nlohmann::json::array();
  for (const auto* p : params) directory.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  full["tensors"] = directory;
  const std::string text = full.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : params) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!out) throw Error(Errc::IoError, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::MissingCheckpoint, "checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw Error(Errc::IoError, "not a checkpoint file");
  if (get<std::uint32_t>(in) != kVersion) throw Error(Errc::IoError, "unsupported checkpoint version");
  const auto len = get<std::uint64_t>(in);
  if (len > (1ull << 30)) throw Error(Errc::IoError, "checkpoint header too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw Error(Errc::IoError, "truncated checkpoint header");
  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(text);
    for (const auto& t : ckpt.header.at("tensors")) {
      const auto rows = t.at("rows").get<Eigen::Index>();
      const auto cols = t.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0 || rows * cols > (1 << 28)) throw Error(Errc::IoError, "bad tensor shape");
      nn::Matrix m(rows, cols);
      if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)))) {
        throw Error(Errc::IoError, "truncated checkpoint tensor data");
      }
      ckpt.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IoError, std::string("malformed checkpoint header: ") + e.what());
  }
  return ckpt;
}

void assign_params(const Checkpoint& ckpt, const nn::ParamList& params) {
  for (auto* p : params) {
    const auto& m = ckpt.tensor(p->name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
      throw Error(Errc::IoError, "shape mismatch for tensor '" + p->name + "'");
    }
    p->value = m;
    p->grad = nn::Matrix::Zero(m.rows(), m.cols());
  }
}

}  // namespace semcom
