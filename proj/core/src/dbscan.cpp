#include "mbflow/dbscan.hpp"

#include <deque>
#include <map>
#include <string>

#include "mbflow/error.hpp"
#include "mbflow/spatial_index.hpp"

namespace mbflow {

std::vector<Index> ClusterSet::members(int id) const {
  std::vector<Index> out;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == id) out.push_back(static_cast<Index>(i));
  }
  return out;
}

std::vector<std::vector<Index>> ClusterSet::all_members() const {
  std::vector<std::vector<Index>> out(static_cast<size_t>(cluster_count));
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) out[static_cast<size_t>(labels[i])].push_back(static_cast<Index>(i));
  }
  return out;
}

Index ClusterSet::noise_count() const {
  Index n = 0;
  for (int l : labels) n += (l == kNoise) ? 1 : 0;
  return n;
}

ClusterSet dbscan(const PointCloud& P, double eps, int min_points) {
  if (!(eps > 0.0)) throw Error("dbscan: eps must be positive, got " + std::to_string(eps));
  if (min_points < 1) throw Error("dbscan: min_points must be >= 1");

  constexpr int kUnvisited = -2;
  const Index n = P.size();
  const SpatialIndex index = build_index(P);
  const auto min_size = static_cast<size_t>(min_points);

  ClusterSet out;
  out.eps = eps;
  out.min_points = min_points;
  out.labels.assign(static_cast<size_t>(n), kUnvisited);
  auto& labels = out.labels;

  int cluster = 0;
  std::deque<Index> frontier;
  for (Index seed = 0; seed < n; ++seed) {
    if (labels[static_cast<size_t>(seed)] != kUnvisited) continue;
    const auto neighbors = index.radius(P[seed], eps);
    if (neighbors.size() < min_size) {
      labels[static_cast<size_t>(seed)] = ClusterSet::kNoise;
      continue;
    }
    labels[static_cast<size_t>(seed)] = cluster;
    frontier.assign(neighbors.begin(), neighbors.end());
    while (!frontier.empty()) {
      const Index j = frontier.front();
      frontier.pop_front();
      int& label = labels[static_cast<size_t>(j)];
      if (label == ClusterSet::kNoise) {
        label = cluster;  // border point
        continue;
      }
      if (label != kUnvisited) continue;
      label = cluster;
      auto next = index.radius(P[j], eps);
      if (next.size() >= min_size) frontier.insert(frontier.end(), next.begin(), next.end());
    }
    ++cluster;
  }
  out.cluster_count = cluster;
  return out;
}

ClusterSet clusters_from_labels(const std::vector<int>& labels) {
  ClusterSet out;
  out.labels.resize(labels.size());
  std::map<int, int> remap;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) {
      out.labels[i] = ClusterSet::kNoise;
      continue;
    }
    auto [it, inserted] = remap.try_emplace(labels[i], static_cast<int>(remap.size()));
    out.labels[i] = it->second;
  }
  out.cluster_count = static_cast<int>(remap.size());
  return out;
}

}  // namespace mbflow
