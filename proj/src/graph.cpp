#include "dpfuse/graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dpfuse/error.hpp"
#include "dpfuse/io.hpp"
#include "dpfuse/rng.hpp"

namespace dpfuse {
namespace {

using nlohmann::json;

// Seed of the per-shingle hash used by SimHash. Fixed so fingerprints are
// stable across runs and machines.
constexpr std::uint64_t kSimHashSeed = 0x5D1C0FFEE0DDF00DULL;

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xCBF29CE484222325ULL ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return mix64(h);
}

// Byte offsets of UTF-8 code point starts; invalid sequences fall back to
// one code point per byte.
std::vector<std::size_t> code_point_starts(std::string_view s) {
  std::vector<std::size_t> starts;
  std::size_t i = 0;
  while (i < s.size()) {
    starts.push_back(i);
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    if (i + len > s.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    i += len;
  }
  starts.push_back(s.size());
  return starts;
}

std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) tokens.push_back(std::move(tok));
  return tokens;
}

const char* kind_name(SlotKind k) {
  switch (k) {
    case SlotKind::kNumeric: return "numeric";
    case SlotKind::kHashedName: return "hashed";
    case SlotKind::kCategorical: return "categorical";
  }
  return "numeric";
}

SlotKind kind_from_name(const std::string& s, const std::string& at) {
  if (s == "numeric") return SlotKind::kNumeric;
  if (s == "hashed") return SlotKind::kHashedName;
  if (s == "categorical") return SlotKind::kCategorical;
  throw validation_error(at + "unknown slot type '" + s + "'");
}

struct PendingUser {
  std::size_t line;
  json attrs;
};

struct PendingPost {
  std::size_t line;
  std::string author;
};

struct PendingFriend {
  std::size_t line;
  std::string a, b;
};

std::optional<int> optional_int(const json& rec, const char* key,
                                const std::string& at) {
  auto it = rec.find(key);
  if (it == rec.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer())
    throw validation_error(at + "field '" + key + "' must be an integer or null");
  return it->get<int>();
}

const std::string& require_string(const json& rec, const char* key,
                                  const std::string& at) {
  auto it = rec.find(key);
  if (it == rec.end() || !it->is_string())
    throw validation_error(at + "missing string field '" + key + "'");
  return it->get_ref<const std::string&>();
}

// Schema inferred from raw attribute objects: key order is the (sorted) JSON
// object order, kinds from the first user.
AttributeSchema infer_schema(const std::vector<PendingUser>& users,
                             const std::string& source) {
  AttributeSchema schema;
  if (users.empty()) return schema;
  const json& first = users.front().attrs;
  for (const auto& [key, value] : first.items()) {
    AttributeSlot slot;
    slot.name = key;
    if (value.is_number()) {
      slot.kind = SlotKind::kNumeric;
    } else if (value.is_string()) {
      slot.kind = SlotKind::kHashedName;
    } else if (value.is_object() && value.contains("category") &&
               value.contains("cardinality")) {
      slot.kind = SlotKind::kCategorical;
      slot.cardinality = value["cardinality"].get<std::uint32_t>();
    } else {
      throw validation_error(where(source, users.front().line) +
                             "attribute '" + key + "' has unsupported type");
    }
    schema.slots.push_back(std::move(slot));
  }
  return schema;
}

void check_schema_shape(const AttributeSchema& schema, const PendingUser& u,
                        const std::string& at) {
  if (!u.attrs.is_object() || u.attrs.size() != schema.size())
    throw validation_error(at + "attribute slots differ from schema (expected " +
                           std::to_string(schema.size()) + " slots)");
  for (const auto& slot : schema.slots) {
    if (!u.attrs.contains(slot.name))
      throw validation_error(at + "schema mismatch: missing attribute '" +
                             slot.name + "'");
  }
}

}  // namespace

std::size_t AttributeSchema::feature_width() const {
  std::size_t w = 0;
  for (const auto& s : slots) w += s.is_categorical() ? s.cardinality : 1;
  return w;
}

std::vector<double> encode_features(const AttributeSchema& schema,
                                    const AttributeVector& x) {
  std::vector<double> out;
  out.reserve(schema.feature_width());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& slot = schema.slots[i];
    if (slot.is_categorical()) {
      for (std::uint32_t c = 0; c < slot.cardinality; ++c)
        out.push_back(c == x.category(i) ? 1.0 : 0.0);
    } else {
      out.push_back(x.values[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void HeteroGraph::validate() const {
  const std::size_t n = user_ids.size();
  const std::size_t p = post_ids.size();
  auto fail = [](const std::string& m) { throw validation_error(m); };

  std::unordered_set<std::string> seen;
  for (const auto& id : user_ids)
    if (!seen.insert(id).second) fail("duplicate user id '" + id + "'");
  seen.clear();
  for (const auto& id : post_ids)
    if (!seen.insert(id).second) fail("duplicate post id '" + id + "'");

  if (attrs.size() != n || interests.size() != n || gender.size() != n ||
      occupation.size() != n)
    fail("per-user field count does not match user count");
  if (post_author.size() != p || post_tokens.size() != p)
    fail("per-post field count does not match post count");

  std::unordered_set<std::uint64_t> edge_keys;
  for (const auto& [a, b] : friendships) {
    if (a >= n || b >= n) fail("friendship references a missing user");
    if (a == b) fail("self-loop on user '" + user_ids[a] + "'");
    const auto lo = std::min(a, b), hi = std::max(a, b);
    if (!edge_keys.insert((std::uint64_t{lo} << 32) | hi).second)
      fail("duplicate friendship " + user_ids[lo] + " - " + user_ids[hi]);
  }
  for (std::size_t j = 0; j < p; ++j)
    if (post_author[j] >= n) fail("post '" + post_ids[j] + "' has a missing author");

  for (std::size_t u = 0; u < n; ++u) {
    const auto& x = attrs[u];
    if (x.values.size() != schema.size())
      fail("user '" + user_ids[u] + "' attribute vector does not match schema");
    for (std::size_t s = 0; s < schema.size(); ++s) {
      const auto& slot = schema.slots[s];
      const double v = x.values[s];
      if (slot.is_categorical()) {
        if (!(v >= 0) || v != std::floor(v) || v >= slot.cardinality)
          fail("user '" + user_ids[u] + "' category out of range in '" +
               slot.name + "'");
      } else if (!(std::abs(v) <= slot.bound)) {
        fail("user '" + user_ids[u] + "' numeric slot '" + slot.name +
             "' outside [-bound, bound]");
      }
    }
    if (interests[u]) {
      for (int c : *interests[u])
        if (c < 0 || c >= kInterestCategories)
          fail("user '" + user_ids[u] + "' has interest outside [0, 10)");
    }
    if (gender[u] && *gender[u] != 0 && *gender[u] != 1)
      fail("user '" + user_ids[u] + "' gender must be 0 or 1");
    if (occupation[u] && *occupation[u] < 0)
      fail("user '" + user_ids[u] + "' occupation must be non-negative");
  }
}

// ---------------------------------------------------------------------------

UserGraph::UserGraph(std::size_t n, std::vector<Edge> edges) : n_(n) {
  for (auto& e : edges) {
    if (e.first >= n || e.second >= n)
      throw validation_error("edge references a node outside [0, n)");
    if (e.first == e.second)
      throw validation_error("self-loop on node " + std::to_string(e.first));
    if (e.first > e.second) std::swap(e.first, e.second);
  }
  std::sort(edges.begin(), edges.end());
  if (std::adjacent_find(edges.begin(), edges.end()) != edges.end())
    throw validation_error("duplicate undirected edge");
  edges_ = std::move(edges);

  std::vector<std::size_t> deg(n, 0);
  for (const auto& [a, b] : edges_) {
    ++deg[a];
    ++deg[b];
  }
  offsets_.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) offsets_[i + 1] = offsets_[i] + deg[i];
  adj_.resize(offsets_[n]);
  std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
  for (const auto& [a, b] : edges_) {
    adj_[cursor[a]++] = b;
    adj_[cursor[b]++] = a;
  }
  for (std::size_t i = 0; i < n; ++i)
    std::sort(adj_.begin() + offsets_[i], adj_.begin() + offsets_[i + 1]);
}

bool UserGraph::has_edge(UserIndex a, UserIndex b) const {
  if (a >= n_ || b >= n_) return false;
  auto nb = neighbors(a);
  return std::binary_search(nb.begin(), nb.end(), b);
}

// ---------------------------------------------------------------------------

HeteroGraph parse_graph(std::istream& in, const std::string& source) {
  HeteroGraph g;
  std::vector<PendingUser> users;
  std::vector<PendingPost> posts;
  std::vector<PendingFriend> friends;
  std::optional<AttributeSchema> declared;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string at = where(source, lineno);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw validation_error(at + "parse error: " + e.what());
    }
    if (!rec.is_object()) throw validation_error(at + "record is not an object");
    const std::string& kind = require_string(rec, "kind", at);
    try {
      if (kind == "user") {
        g.user_ids.push_back(require_string(rec, "id", at));
        users.push_back({lineno, rec.value("attrs", json::object())});
        g.gender.push_back(optional_int(rec, "gender", at));
        g.occupation.push_back(optional_int(rec, "occupation", at));
        auto it = rec.find("interests");
        if (it == rec.end() || it->is_null()) {
          g.interests.emplace_back();
        } else {
          auto labels = it->get<std::vector<int>>();
          std::sort(labels.begin(), labels.end());
          labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
          g.interests.emplace_back(std::move(labels));
        }
      } else if (kind == "post") {
        g.post_ids.push_back(require_string(rec, "id", at));
        posts.push_back({lineno, require_string(rec, "author", at)});
        g.post_tokens.push_back(tokenize(rec.value("text", std::string())));
      } else if (kind == "friend") {
        friends.push_back({lineno, require_string(rec, "a", at),
                           require_string(rec, "b", at)});
      } else if (kind == "schema") {
        AttributeSchema schema;
        for (const auto& s : rec.at("slots")) {
          AttributeSlot slot;
          slot.name = s.at("name").get<std::string>();
          slot.kind = kind_from_name(s.at("type").get<std::string>(), at);
          slot.min = s.value("min", 0.0);
          slot.max = s.value("max", 0.0);
          slot.bound = s.value("bound", 1.0);
          slot.cardinality = s.value("cardinality", 0u);
          schema.slots.push_back(std::move(slot));
        }
        declared = std::move(schema);
      } else if (kind == "provenance") {
        // informational only
      } else {
        throw validation_error(at + "unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw validation_error(at + "malformed record: " + e.what());
    }
  }

  std::unordered_map<std::string, UserIndex> user_index;
  for (std::size_t i = 0; i < g.user_ids.size(); ++i) {
    if (!user_index.emplace(g.user_ids[i], static_cast<UserIndex>(i)).second)
      throw validation_error(where(source, users[i].line) + "duplicate user id '" +
                             g.user_ids[i] + "'");
  }
  for (const auto& p : posts) {
    auto it = user_index.find(p.author);
    if (it == user_index.end())
      throw validation_error(where(source, p.line) +
                             "dangling reference: post names unknown author '" +
                             p.author + "'");
    g.post_author.push_back(it->second);
  }
  for (const auto& f : friends) {
    auto ia = user_index.find(f.a);
    auto ib = user_index.find(f.b);
    if (ia == user_index.end() || ib == user_index.end())
      throw validation_error(where(source, f.line) +
                             "dangling reference: friend edge names unknown user '" +
                             (ia == user_index.end() ? f.a : f.b) + "'");
    if (ia->second == ib->second)
      throw validation_error(where(source, f.line) + "self-loop on user '" + f.a + "'");
    g.friendships.emplace_back(std::min(ia->second, ib->second),
                               std::max(ia->second, ib->second));
  }

  // Attributes.
  const bool normalized = declared.has_value();
  g.schema = normalized ? *declared : infer_schema(users, source);
  const std::size_t slots = g.schema.size();
  std::vector<std::vector<double>> raw(users.size(), std::vector<double>(slots));
  for (std::size_t u = 0; u < users.size(); ++u) {
    const std::string at = where(source, users[u].line) + "user '" + g.user_ids[u] + "': ";
    check_schema_shape(g.schema, users[u], at);
    for (std::size_t s = 0; s < slots; ++s) {
      const auto& slot = g.schema.slots[s];
      const json& v = users[u].attrs.at(slot.name);
      if (slot.is_categorical()) {
        json idx = v;
        if (v.is_object()) {
          if (!v.contains("category") || v.value("cardinality", 0u) != slot.cardinality)
            throw validation_error(at + "schema mismatch in categorical slot '" +
                                   slot.name + "'");
          idx = v["category"];
        }
        if (!idx.is_number_integer())
          throw validation_error(at + "schema mismatch: slot '" + slot.name +
                                 "' expects a category index");
        const auto c = idx.get<long long>();
        if (c < 0 || c >= static_cast<long long>(slot.cardinality))
          throw validation_error(at + "category out of range in slot '" + slot.name + "'");
        raw[u][s] = static_cast<double>(c);
      } else if (slot.kind == SlotKind::kHashedName && !normalized) {
        if (!v.is_string())
          throw validation_error(at + "schema mismatch: slot '" + slot.name +
                                 "' expects a string");
        if (v.get_ref<const std::string&>().empty())
          throw validation_error(at + "empty screen name in slot '" + slot.name + "'");
        raw[u][s] = encode_screen_name(v.get_ref<const std::string&>());
      } else {
        if (!v.is_number())
          throw validation_error(at + "schema mismatch: slot '" + slot.name +
                                 "' expects a number");
        raw[u][s] = v.get<double>();
        if (!std::isfinite(raw[u][s]))
          throw validation_error(at + "non-finite value in slot '" + slot.name + "'");
      }
    }
  }

  if (!normalized) {
    for (std::size_t s = 0; s < slots; ++s) {
      auto& slot = g.schema.slots[s];
      if (slot.is_categorical() || users.empty()) continue;
      slot.min = slot.max = raw[0][s];
      for (const auto& r : raw) {
        slot.min = std::min(slot.min, r[s]);
        slot.max = std::max(slot.max, r[s]);
      }
      const double span = slot.max - slot.min;
      for (auto& r : raw) {
        double x = span > 0 ? 2.0 * (r[s] - slot.min) / span - 1.0 : 0.0;
        r[s] = std::clamp(x, -1.0, 1.0);
      }
    }
  }
  g.attrs.reserve(users.size());
  for (auto& r : raw) g.attrs.push_back(AttributeVector{std::move(r)});

  g.validate();
  return g;
}

HeteroGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open graph file " + path.string());
  return parse_graph(in, path.string());
}

void write_graph(std::ostream& out, const HeteroGraph& g, const json& provenance) {
  if (!provenance.is_null()) {
    json rec = provenance;
    rec["kind"] = "provenance";
    out << rec.dump() << '\n';
  }
  json slots = json::array();
  for (const auto& s : g.schema.slots) {
    json j = {{"name", s.name}, {"type", kind_name(s.kind)}};
    if (s.is_categorical()) {
      j["cardinality"] = s.cardinality;
    } else {
      j["min"] = s.min;
      j["max"] = s.max;
      j["bound"] = s.bound;
    }
    slots.push_back(std::move(j));
  }
  out << json{{"kind", "schema"}, {"slots", std::move(slots)}}.dump() << '\n';

  for (std::size_t u = 0; u < g.user_count(); ++u) {
    json attrs = json::object();
    for (std::size_t s = 0; s < g.schema.size(); ++s) {
      if (g.schema.slots[s].is_categorical())
        attrs[g.schema.slots[s].name] = g.attrs[u].category(s);
      else
        attrs[g.schema.slots[s].name] = g.attrs[u].values[s];
    }
    json rec = {{"kind", "user"}, {"id", g.user_ids[u]}, {"attrs", std::move(attrs)}};
    rec["gender"] = g.gender[u] ? json(*g.gender[u]) : json(nullptr);
    rec["occupation"] = g.occupation[u] ? json(*g.occupation[u]) : json(nullptr);
    rec["interests"] = g.interests[u] ? json(*g.interests[u]) : json(nullptr);
    out << rec.dump() << '\n';
  }
  for (std::size_t p = 0; p < g.post_count(); ++p) {
    std::string text;
    for (const auto& tok : g.post_tokens[p]) {
      if (!text.empty()) text.push_back(' ');
      text += tok;
    }
    out << json{{"kind", "post"},
                {"id", g.post_ids[p]},
                {"author", g.user_ids[g.post_author[p]]},
                {"text", text}}
               .dump()
        << '\n';
  }
  for (const auto& [a, b] : g.friendships)
    out << json{{"kind", "friend"}, {"a", g.user_ids[a]}, {"b", g.user_ids[b]}}.dump()
        << '\n';
}

void save_graph(const std::filesystem::path& path, const HeteroGraph& g,
                const json& provenance) {
  write_file_atomic(path, [&](std::ostream& out) { write_graph(out, g, provenance); });
}

// ---------------------------------------------------------------------------

std::uint64_t simhash64(std::string_view text) {
  const auto starts = code_point_starts(text);
  const std::size_t cps = starts.size() - 1;
  std::set<std::string_view> shingles;
  if (cps < 3) {
    shingles.insert(text);
  } else {
    for (std::size_t i = 0; i + 3 <= cps; ++i)
      shingles.insert(text.substr(starts[i], starts[i + 3] - starts[i]));
  }
  std::array<int, 64> votes{};
  for (auto sh : shingles) {
    const std::uint64_t h = fnv1a64(sh, kSimHashSeed);
    for (int b = 0; b < 64; ++b) votes[b] += ((h >> b) & 1) ? 1 : -1;
  }
  std::uint64_t fp = 0;
  for (int b = 0; b < 64; ++b)
    if (votes[b] > 0) fp |= (std::uint64_t{1} << b);
  return fp;
}

double encode_screen_name(std::string_view name) {
  if (name.empty()) throw validation_error("screen name must be non-empty");
  const long double u = static_cast<long double>(simhash64(name));
  const long double top = 18446744073709551615.0L;
  return static_cast<double>(2.0L * u / top - 1.0L);
}

UserGraph extract_user_graph(const HeteroGraph& g) {
  return UserGraph(g.user_count(), g.friendships);
}

HeteroGraph drop_posts(const HeteroGraph& g) {
  HeteroGraph out = g;
  out.post_ids.clear();
  out.post_author.clear();
  out.post_tokens.clear();
  return out;
}

LabelSplit split_ids(std::vector<UserIndex> ids, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw usage_error("split ratio must lie in (0, 1)");
  if (ids.empty()) throw validation_error("no labelled users to split");
  Rng rng = Rng::substream(seed, StreamTag::kSplit);
  for (std::size_t i = ids.size() - 1; i > 0; --i)
    std::swap(ids[i], ids[rng.index(i + 1)]);
  const auto n_train =
      static_cast<std::size_t>(std::llround(ratio * static_cast<double>(ids.size())));
  LabelSplit split;
  split.ratio = ratio;
  split.seed = seed;
  split.train.assign(ids.begin(), ids.begin() + n_train);
  split.test.assign(ids.begin() + n_train, ids.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

LabelSplit split_labels(const HeteroGraph& g, double ratio, std::uint64_t seed) {
  std::vector<UserIndex> ids;
  for (std::size_t u = 0; u < g.user_count(); ++u)
    if (g.interests[u]) ids.push_back(static_cast<UserIndex>(u));
  if (ids.empty()) throw validation_error("graph has no interest-labelled users");
  return split_ids(std::move(ids), ratio, seed);
}

}  // namespace dpfuse
