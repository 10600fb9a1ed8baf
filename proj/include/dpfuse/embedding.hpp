#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace dpfuse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// id -> fixed-dimension real vector, one row per id. Used for words, users
/// and fused outputs alike.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> ids, Matrix vectors);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(vectors_.cols()); }
  bool empty() const { return ids_.empty(); }

  const std::vector<std::string>& ids() const { return ids_; }
  const Matrix& vectors() const { return vectors_; }
  Matrix& vectors() { return vectors_; }
  auto row(std::size_t i) const { return vectors_.row(static_cast<Eigen::Index>(i)); }

  std::optional<std::size_t> find(const std::string& id) const;
  /// Throws a validation Error for unknown ids.
  std::size_t index_of(const std::string& id) const;

  bool operator==(const EmbeddingTable& o) const {
    return ids_ == o.ids_ && vectors_.rows() == o.vectors_.rows() &&
           vectors_.cols() == o.vectors_.cols() && vectors_ == o.vectors_;
  }

 private:
  std::vector<std::string> ids_;
  Matrix vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Word vectors feeding the text sanitizer; the vocabulary is the id list.
using WordEmbeddingTable = EmbeddingTable;

/// Text format: optional leading "# ..." provenance lines, then "n d", then
/// n lines "id v_1 ... v_d".
void write_embeddings(std::ostream& out, const EmbeddingTable& t,
                      const nlohmann::json& provenance = nullptr);
void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& t,
                     const nlohmann::json& provenance = nullptr);
EmbeddingTable parse_embeddings(std::istream& in, const std::string& source = "<stream>");
EmbeddingTable load_embeddings(const std::filesystem::path& path);

/// Versioned binary tensor container: magic "DPFT", u32 version, u32
/// metadata length and UTF-8 metadata bytes (provenance JSON), u32 count,
/// shape table (u16 name length, name bytes, u32 rows, u32 cols), then the
/// tensors' entries as little-endian float32 in row-major order.
struct NamedTensor {
  std::string name;
  Matrix value;
};

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedTensor>& tensors, const std::string& metadata = {});
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path,
                                         std::string* metadata = nullptr);

}  // namespace dpfuse
