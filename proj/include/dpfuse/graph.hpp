#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace dpfuse {

/// Number of interest categories a user may be labelled with.
inline constexpr int kInterestCategories = 10;

using UserIndex = std::uint32_t;
/// Undirected edge stored with first < second.
using Edge = std::pair<UserIndex, UserIndex>;

enum class SlotKind {
  kNumeric,      // real value, min/max scaled to [-1, 1]
  kHashedName,   // string hashed with SimHash, then scaled like kNumeric
  kCategorical,  // category index in [0, cardinality)
};

struct AttributeSlot {
  std::string name;
  SlotKind kind = SlotKind::kNumeric;
  double min = 0.0;  // raw range observed at load time
  double max = 0.0;
  // Normalized values lie in [-bound, bound]. 1 for raw data; sanitized data
  // carries the piecewise-mechanism output range.
  double bound = 1.0;
  std::uint32_t cardinality = 0;

  bool is_categorical() const { return kind == SlotKind::kCategorical; }
  bool operator==(const AttributeSlot&) const = default;
};

struct AttributeSchema {
  std::vector<AttributeSlot> slots;

  std::size_t size() const { return slots.size(); }
  /// Width of the dense feature encoding: one column per numeric slot plus a
  /// one-hot block per categorical slot.
  std::size_t feature_width() const;
  bool operator==(const AttributeSchema&) const = default;
};

/// One value per schema slot. Categorical slots hold the category index.
struct AttributeVector {
  std::vector<double> values;

  std::uint32_t category(std::size_t slot) const {
    return static_cast<std::uint32_t>(values[slot]);
  }
  bool operator==(const AttributeVector&) const = default;
};

/// Users, posts, friendship and write relations of one social network.
/// Dense indices follow file order; `user_ids`/`post_ids` keep the opaque ids.
struct HeteroGraph {
  std::vector<std::string> user_ids;
  std::vector<std::string> post_ids;
  std::vector<Edge> friendships;
  std::vector<UserIndex> post_author;  // write relation, one author per post
  std::vector<std::vector<std::string>> post_tokens;
  AttributeSchema schema;
  std::vector<AttributeVector> attrs;
  // Evaluation-only ground truth.
  std::vector<std::optional<std::vector<int>>> interests;
  std::vector<std::optional<int>> gender;
  std::vector<std::optional<int>> occupation;

  std::size_t user_count() const { return user_ids.size(); }
  std::size_t post_count() const { return post_ids.size(); }

  /// Throws a validation Error naming the first violated invariant.
  void validate() const;
  bool operator==(const HeteroGraph&) const = default;
};

/// Simple undirected graph over users with sorted CSR adjacency.
class UserGraph {
 public:
  UserGraph() = default;
  /// Edges may come in either orientation; self-loops and duplicates throw.
  UserGraph(std::size_t n, std::vector<Edge> edges);

  std::size_t n() const { return n_; }
  std::size_t m() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }
  std::span<const UserIndex> neighbors(UserIndex u) const {
    return {adj_.data() + offsets_[u], adj_.data() + offsets_[u + 1]};
  }
  std::size_t degree(UserIndex u) const { return offsets_[u + 1] - offsets_[u]; }
  bool has_edge(UserIndex a, UserIndex b) const;

  bool operator==(const UserGraph& o) const {
    return n_ == o.n_ && edges_ == o.edges_;
  }

 private:
  std::size_t n_ = 0;
  std::vector<Edge> edges_;  // sorted, first < second
  std::vector<std::size_t> offsets_{0};
  std::vector<UserIndex> adj_;
};

struct LabelSplit {
  std::vector<UserIndex> train;
  std::vector<UserIndex> test;
  double ratio = 0.8;
  std::uint64_t seed = 0;
};

HeteroGraph load_graph(const std::filesystem::path& path);
HeteroGraph parse_graph(std::istream& in, const std::string& source = "<stream>");

/// Writes the JSON-Lines form with an explicit schema record, so a reload
/// reproduces the in-memory graph exactly. A non-null provenance object is
/// written as the first record.
void write_graph(std::ostream& out, const HeteroGraph& g,
                 const nlohmann::json& provenance = nullptr);
void save_graph(const std::filesystem::path& path, const HeteroGraph& g,
                const nlohmann::json& provenance = nullptr);

/// 64-bit SimHash over the set of character 3-grams (code points).
std::uint64_t simhash64(std::string_view text);
/// SimHash fingerprint affinely mapped from [0, 2^64 - 1] onto [-1, 1].
double encode_screen_name(std::string_view name);

UserGraph extract_user_graph(const HeteroGraph& g);

/// Copy of `g` without posts or write edges.
HeteroGraph drop_posts(const HeteroGraph& g);

/// Uniform random split of the interest-labelled users; |train| = round(ratio*N).
LabelSplit split_labels(const HeteroGraph& g, double ratio, std::uint64_t seed);
/// Same rule over an arbitrary id set.
LabelSplit split_ids(std::vector<UserIndex> ids, double ratio, std::uint64_t seed);

/// Dense user features: numeric slots as-is, categorical slots one-hot.
std::vector<double> encode_features(const AttributeSchema& schema,
                                    const AttributeVector& x);

}  // namespace dpfuse
