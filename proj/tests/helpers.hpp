#pragma once

#include <filesystem>
#include <sstream>
#include <string>

#include "dpfuse/graph.hpp"

namespace dpfuse::test {

inline HeteroGraph graph_from_text(const std::string& text) {
  std::istringstream in(text);
  return parse_graph(in, "<test>");
}

inline std::string graph_to_text(const HeteroGraph& g) {
  std::ostringstream out;
  write_graph(out, g);
  return out.str();
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dpfuse-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Graph without posts or attributes where every user carries the given labels.
inline HeteroGraph labelled_users(std::size_t n) {
  HeteroGraph g;
  for (std::size_t i = 0; i < n; ++i) {
    g.user_ids.push_back("u" + std::to_string(i));
    g.attrs.emplace_back();
    g.interests.emplace_back();
    g.gender.emplace_back();
    g.occupation.emplace_back();
  }
  return g;
}

}  // namespace dpfuse::test
