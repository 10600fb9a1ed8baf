#include "dpfuse/embedding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "dpfuse/error.hpp"
#include "dpfuse/io.hpp"

namespace dpfuse {
namespace {

constexpr char kMagic[4] = {'D', 'P', 'F', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::string& source) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw validation_error(source + ": truncated checkpoint");
  return v;
}

}  // namespace

EmbeddingTable::EmbeddingTable(std::vector<std::string> ids, Matrix vectors)
    : ids_(std::move(ids)), vectors_(std::move(vectors)) {
  if (static_cast<Eigen::Index>(ids_.size()) != vectors_.rows())
    throw validation_error("embedding table: id count does not match row count");
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second)
      throw validation_error("embedding table: duplicate id '" + ids_[i] + "'");
  }
}

std::optional<std::size_t> EmbeddingTable::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingTable::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end())
    throw validation_error("embedding table has no entry for '" + id + "'");
  return it->second;
}

void write_embeddings(std::ostream& out, const EmbeddingTable& t,
                      const nlohmann::json& provenance) {
  if (!provenance.is_null()) out << "# " << provenance.dump() << '\n';
  out << t.size() << ' ' << t.dim() << '\n';
  const Matrix& v = t.vectors();
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << t.ids()[i];
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      out << ' ' << format_double(v(static_cast<Eigen::Index>(i), j));
    out << '\n';
  }
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& t,
                     const nlohmann::json& provenance) {
  write_file_atomic(path, [&](std::ostream& out) { write_embeddings(out, t, provenance); });
}

EmbeddingTable parse_embeddings(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  auto at = [&] { return source + ":" + std::to_string(lineno) + ": "; };
  bool have_header = false;
  std::size_t n = 0, d = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string extra;
    if (!(ss >> n >> d) || (ss >> extra))
      throw validation_error(at() + "expected header 'n d'");
    have_header = true;
    break;
  }
  if (!have_header) throw validation_error(source + ": missing 'n d' header");
  if (d == 0) throw validation_error(at() + "embedding dimension must be positive");

  std::vector<std::string> ids;
  ids.reserve(n);
  Matrix vectors(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) {
      ++lineno;
      throw validation_error(at() + "expected " + std::to_string(n) +
                             " rows, found " + std::to_string(i));
    }
    ++lineno;
    std::istringstream ss(line);
    std::string id;
    if (!(ss >> id)) throw validation_error(at() + "missing id");
    for (std::size_t j = 0; j < d; ++j) {
      std::string tok;
      if (!(ss >> tok))
        throw validation_error(at() + "expected " + std::to_string(d) + " values");
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size() || !std::isfinite(v))
        throw validation_error(at() + "bad value '" + tok + "'");
      vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
    std::string extra;
    if (ss >> extra) throw validation_error(at() + "too many values on row");
    ids.push_back(std::move(id));
  }
  try {
    return EmbeddingTable(std::move(ids), std::move(vectors));
  } catch (const Error& e) {
    throw validation_error(source + ": " + e.what());
  }
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open embedding file " + path.string());
  return parse_embeddings(in, path.string());
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedTensor>& tensors, const std::string& metadata) {
  write_file_atomic(path, [&](std::ostream& out) {
    out.write(kMagic, 4);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(metadata.size()));
    out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rows()));
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.cols()));
    }
    for (const auto& t : tensors)
      for (Eigen::Index r = 0; r < t.value.rows(); ++r)
        for (Eigen::Index c = 0; c < t.value.cols(); ++c)
          put_le<float>(out, static_cast<float>(t.value(r, c)));
  });
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path,
                                         std::string* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint " + path.string());
  const std::string src = path.string();
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw validation_error(src + ": not a checkpoint (bad magic)");
  const auto version = get_le<std::uint32_t>(in, src);
  if (version != kCheckpointVersion)
    throw validation_error(src + ": unsupported checkpoint version " +
                           std::to_string(version));
  const auto meta_len = get_le<std::uint32_t>(in, src);
  std::string meta(meta_len, '\0');
  if (meta_len && !in.read(meta.data(), meta_len)) throw validation_error(src + ": truncated checkpoint");
  if (metadata) *metadata = std::move(meta);
  const auto count = get_le<std::uint32_t>(in, src);
  std::vector<NamedTensor> tensors(count);
  for (auto& t : tensors) {
    const auto len = get_le<std::uint16_t>(in, src);
    t.name.resize(len);
    if (!in.read(t.name.data(), len)) throw validation_error(src + ": truncated checkpoint");
    const auto rows = get_le<std::uint32_t>(in, src);
    const auto cols = get_le<std::uint32_t>(in, src);
    t.value.resize(rows, cols);
  }
  for (auto& t : tensors)
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c)
        t.value(r, c) = get_le<float>(in, src);
  return tensors;
}

}  // namespace dpfuse
