#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unistd.h>
#include <vector>

#include "hydronet/error.hpp"
#include "hydronet/graph.hpp"
#include "hydronet/random.hpp"

namespace fixtures {

using hydronet::ErrorCode;

/// Code of the hydronet::Error thrown by f, or nullopt when nothing is thrown.
inline std::optional<ErrorCode> code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const hydronet::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

/// A plausible pipe with every attribute in range.
inline hydronet::PipeEdge pipe(const std::string& from, const std::string& to, double diameter = 1.0,
                               double slope = 0.01, double roughness = 0.013) {
  hydronet::PipeEdge e;
  e.from = from;
  e.to = to;
  e.length = 250.0;
  e.roughness = roughness;
  e.diameter = diameter;
  e.slope = slope;
  e.gis_length = 252.0;
  e.max_flow = 1.2;
  e.max_velocity = 2.4;
  e.max_over_full_flow = 0.3;
  e.max_over_full_depth = 0.4;
  return e;
}

inline hydronet::PipeGraph chain(const std::vector<std::string>& ids) {
  std::vector<hydronet::PipeEdge> edges;
  for (std::size_t i = 0; i + 1 < ids.size(); ++i) edges.push_back(pipe(ids[i], ids[i + 1]));
  return hydronet::build_graph(ids, edges, ids.back());
}

/// Random in-tree on n nodes: node i (i < n-1) drains to a random later node,
/// so node n-1 is the outlet. Attributes vary per edge.
inline hydronet::PipeGraph random_tree(std::size_t n, std::uint64_t seed) {
  hydronet::Xoshiro256 rng(seed);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("N" + std::to_string(i));
  std::vector<hydronet::PipeEdge> edges;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const auto to = i + 1 + rng.below(n - 1 - i);
    auto e = pipe(ids[i], ids[to], rng.uniform(0.5, 2.0), rng.uniform(0.002, 0.03), rng.uniform(0.011, 0.016));
    e.length = rng.uniform(50, 600);
    e.gis_length = e.length * rng.uniform(0.95, 1.05);
    e.max_flow = rng.uniform(0.1, 3.0);
    e.max_velocity = rng.uniform(0.5, 4.0);
    e.max_over_full_flow = rng.uniform(0.05, 0.9);
    e.max_over_full_depth = rng.uniform(0.1, 0.9);
    edges.push_back(e);
  }
  return hydronet::build_graph(ids, edges, ids.back());
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("hydronet-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
