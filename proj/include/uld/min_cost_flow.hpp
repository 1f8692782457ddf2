#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <queue>
#include <utility>
#include <vector>

namespace uld {

/// Successive-shortest-path min-cost flow with integer capacities and
/// non-negative real arc costs. Dijkstra runs on reduced costs; node
/// potentials are kept so that every residual arc has reduced cost >= 0,
/// which makes them a dual certificate once the flow is complete.
class MinCostFlow {
 public:
  using Flow = std::int64_t;

  struct Arc {
    int to;
    Flow cap;
    double cost;
  };

  explicit MinCostFlow(int num_nodes) : adj_(num_nodes), potential_(num_nodes, 0.0) {}

  /// Returns the id of the forward arc; its residual twin is id ^ 1.
  int add_arc(int from, int to, Flow cap, double cost) {
    const int id = static_cast<int>(arcs_.size());
    arcs_.push_back({to, cap, cost});
    arcs_.push_back({from, 0, -cost});
    adj_[from].push_back(id);
    adj_[to].push_back(id + 1);
    return id;
  }

  void reserve_arcs(std::size_t n) { arcs_.reserve(2 * n); }

  /// Pushes up to `limit` units from source to sink along successive
  /// cheapest paths. Returns the amount pushed.
  Flow solve(int source, int sink, Flow limit) {
    const int n = static_cast<int>(adj_.size());
    std::vector<double> dist(n);
    std::vector<int> via(n);
    std::vector<char> done(n);
    constexpr double kInf = std::numeric_limits<double>::infinity();
    using Entry = std::pair<double, int>;

    Flow pushed = 0;
    while (pushed < limit) {
      std::fill(dist.begin(), dist.end(), kInf);
      std::fill(via.begin(), via.end(), -1);
      std::fill(done.begin(), done.end(), 0);
      std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
      dist[source] = 0.0;
      heap.emplace(0.0, source);
      while (!heap.empty()) {
        const auto [d, u] = heap.top();
        heap.pop();
        if (done[u]) continue;
        done[u] = 1;
        if (u == sink) break;
        for (const int id : adj_[u]) {
          const Arc& a = arcs_[id];
          if (a.cap <= 0 || done[a.to]) continue;
          const double reduced = std::max(0.0, a.cost + potential_[u] - potential_[a.to]);
          const double nd = d + reduced;
          if (nd < dist[a.to]) {
            dist[a.to] = nd;
            via[a.to] = id;
            heap.emplace(nd, a.to);
          }
        }
      }
      if (!done[sink]) break;

      // Nodes not settled before the sink get the sink distance, which keeps
      // all residual reduced costs non-negative.
      const double cap_dist = dist[sink];
      for (int v = 0; v < n; ++v) potential_[v] += std::min(dist[v], cap_dist);

      Flow bottleneck = limit - pushed;
      for (int v = sink; v != source; v = arcs_[via[v] ^ 1].to) {
        bottleneck = std::min(bottleneck, arcs_[via[v]].cap);
      }
      for (int v = sink; v != source; v = arcs_[via[v] ^ 1].to) {
        arcs_[via[v]].cap -= bottleneck;
        arcs_[via[v] ^ 1].cap += bottleneck;
      }
      pushed += bottleneck;
    }
    return pushed;
  }

  /// Flow currently on a forward arc.
  [[nodiscard]] Flow flow(int arc_id) const { return arcs_[arc_id ^ 1].cap; }
  [[nodiscard]] double potential(int node) const { return potential_[node]; }

 private:
  std::vector<Arc> arcs_;
  std::vector<std::vector<int>> adj_;
  std::vector<double> potential_;
};

}  // namespace uld
