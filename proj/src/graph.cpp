#include "histrec/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace histrec {

SubgraphMap::SubgraphMap(int h, int w, int num_rows, bool all_active)
    : h_(h), w_(w), k_(num_rows), blocks_((num_rows + 63) / 64) {
  bits_.assign(static_cast<size_t>(h) * w * blocks_, 0);
  if (all_active) {
    for (int loc = 0; loc < h * w; ++loc)
      for (int k = 0; k < num_rows; ++k) set_active(loc, k, true);
  }
}

void SubgraphMap::set_active(int loc, int k, bool v) {
  std::uint64_t& word = bits_[static_cast<size_t>(loc) * blocks_ + (k >> 6)];
  if (v)
    word |= (1ull << (k & 63));
  else
    word &= ~(1ull << (k & 63));
}

int SubgraphMap::count(int loc) const {
  int c = 0;
  for (int b = 0; b < blocks_; ++b)
    c += __builtin_popcountll(bits_[static_cast<size_t>(loc) * blocks_ + b]);
  return c;
}

int max_contrast(const std::vector<NodeId>& nodes) {
  int c = 0;
  for (const auto& n : nodes) c = std::max(c, n.contrast);
  return c;
}

std::vector<TreeEdge> build_spanning_tree(const std::vector<NodeId>& nodes) {
  std::set<NodeId> present(nodes.begin(), nodes.end());
  std::set<int> ref_levels;
  for (const auto& n : present)
    if (n.contrast == 0) ref_levels.insert(n.level);
  for (const auto& n : present)
    if (n.contrast != 0 && !ref_levels.count(n.level))
      throw std::invalid_argument("build_spanning_tree: histology node (c=" +
                                  std::to_string(n.contrast) + ", n=" + std::to_string(n.level) +
                                  ") has no reference node at its level");
  std::vector<TreeEdge> edges;
  // Chain edges between consecutive present reference levels.
  for (auto it = ref_levels.begin(); it != ref_levels.end(); ++it) {
    auto next = std::next(it);
    if (next != ref_levels.end() && *next == *it + 1) {
      TreeEdge e;
      e.from = {0, *it};
      e.to = {0, *next};
      edges.push_back(e);
    }
  }
  // Spokes sorted by (contrast, level).
  std::vector<NodeId> hist(present.begin(), present.end());
  for (const auto& n : hist) {
    if (n.contrast == 0) continue;
    TreeEdge e;
    e.from = {0, n.level};
    e.to = n;
    edges.push_back(e);
  }
  for (size_t i = 0; i < edges.size(); ++i) edges[i].index = static_cast<int>(i);
  return edges;
}

std::vector<ObservationEdge> build_observation_graph(const std::vector<NodeId>& nodes, int P) {
  if (P < 0) throw std::invalid_argument("build_observation_graph: P < 0");
  std::set<NodeId> present(nodes.begin(), nodes.end());
  const int C = max_contrast(nodes);
  std::set<int> levels;
  for (const auto& n : present) levels.insert(n.level);

  std::vector<ObservationEdge> obs;
  // Intermodality edges sorted by (n, c, c').
  for (int n : levels)
    for (int c = 0; c <= C; ++c) {
      if (!present.count({c, n})) continue;
      for (int c2 = c + 1; c2 <= C; ++c2) {
        if (!present.count({c2, n})) continue;
        ObservationEdge e;
        e.from = {c, n};
        e.to = {c2, n};
        e.inter_flag = 1;
        e.separations.assign(C + 1, 0.0);
        obs.push_back(std::move(e));
      }
    }
  // Intramodality edges sorted by (c, n, n').
  for (int c = 0; c <= C; ++c)
    for (int n : levels) {
      if (!present.count({c, n})) continue;
      for (int n2 = n + 1; n2 <= n + P; ++n2) {
        if (!present.count({c, n2})) continue;
        ObservationEdge e;
        e.from = {c, n};
        e.to = {c, n2};
        e.inter_flag = 0;
        e.separations.assign(C + 1, 0.0);
        e.separations[c] = n2 - n;
        obs.push_back(std::move(e));
      }
    }
  for (size_t i = 0; i < obs.size(); ++i) obs[i].index = static_cast<int>(i);
  return obs;
}

namespace {

struct TreeIndex {
  std::map<NodeId, int> node_ix;
  std::vector<int> parent;       // node -> parent node (-1 at roots)
  std::vector<int> parent_edge;  // node -> tree edge index to parent
  std::vector<int> parent_sign;  // +1 if edge points parent->node
  std::vector<int> depth;
};

TreeIndex index_tree(const std::vector<TreeEdge>& tree) {
  TreeIndex ti;
  for (const auto& e : tree) {
    ti.node_ix.emplace(e.from, 0);
    ti.node_ix.emplace(e.to, 0);
  }
  int ix = 0;
  for (auto& [node, i] : ti.node_ix) i = ix++;
  const int n = ix;
  std::vector<std::vector<std::pair<int, int>>> adj(n);  // (neighbour, edge)
  for (const auto& e : tree) {
    int a = ti.node_ix.at(e.from), b = ti.node_ix.at(e.to);
    adj[a].push_back({b, e.index});
    adj[b].push_back({a, e.index});
  }
  ti.parent.assign(n, -2);
  ti.parent_edge.assign(n, -1);
  ti.parent_sign.assign(n, 0);
  ti.depth.assign(n, 0);
  for (int root = 0; root < n; ++root) {
    if (ti.parent[root] != -2) continue;
    ti.parent[root] = -1;
    std::vector<int> stack{root};
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (auto [v, eix] : adj[u]) {
        if (ti.parent[v] != -2) continue;
        ti.parent[v] = u;
        ti.parent_edge[v] = eix;
        // sign +1 means the stored edge points parent -> child.
        ti.parent_sign[v] = (ti.node_ix.at(tree[eix].to) == v) ? 1 : -1;
        ti.depth[v] = ti.depth[u] + 1;
        stack.push_back(v);
      }
    }
  }
  return ti;
}

}  // namespace

PathMatrix build_path_matrix(const std::vector<TreeEdge>& tree,
                             const std::vector<ObservationEdge>& observations) {
  TreeIndex ti = index_tree(tree);
  PathMatrix W;
  W.rows = static_cast<int>(observations.size());
  W.cols = static_cast<int>(tree.size());
  W.row.resize(W.rows);
  for (const auto& o : observations) {
    auto ita = ti.node_ix.find(o.from);
    auto itb = ti.node_ix.find(o.to);
    if (ita == ti.node_ix.end() || itb == ti.node_ix.end())
      throw std::invalid_argument("build_path_matrix: observation endpoint not in tree");
    int a = ita->second, b = itb->second;
    // Climb both endpoints to their lowest common ancestor. Edges on the
    // "from" side are traversed child->parent, on the "to" side parent->child.
    std::vector<std::pair<int, int>> up, down;
    int x = a, y = b;
    while (ti.depth[x] > ti.depth[y]) {
      up.push_back({ti.parent_edge[x], -ti.parent_sign[x]});
      x = ti.parent[x];
    }
    while (ti.depth[y] > ti.depth[x]) {
      down.push_back({ti.parent_edge[y], ti.parent_sign[y]});
      y = ti.parent[y];
    }
    while (x != y) {
      if (ti.parent[x] < 0 || ti.parent[y] < 0)
        throw std::invalid_argument("build_path_matrix: endpoints in different tree components");
      up.push_back({ti.parent_edge[x], -ti.parent_sign[x]});
      x = ti.parent[x];
      down.push_back({ti.parent_edge[y], ti.parent_sign[y]});
      y = ti.parent[y];
    }
    PathRow& row = W.row[o.index];
    row.entries = std::move(up);
    row.entries.insert(row.entries.end(), down.rbegin(), down.rend());
    std::sort(row.entries.begin(), row.entries.end());
  }
  return W;
}

SubgraphMap build_subgraphs(const std::map<NodeId, const ImageSection*>& masks,
                            int control_h, int control_w,
                            const std::vector<ObservationEdge>& observations) {
  if (masks.empty()) throw std::invalid_argument("build_subgraphs: no masks");
  const ImageSection* first = masks.begin()->second;
  const int H = first->height, W = first->width;
  for (auto& [node, m] : masks) {
    if (m->height != H || m->width != W)
      throw std::invalid_argument("build_subgraphs: mask dims differ across nodes");
    if (m->mask.size() != static_cast<size_t>(H) * W)
      throw std::invalid_argument("build_subgraphs: mask/image dimension mismatch");
  }
  if (control_h > H || control_w > W)
    throw std::invalid_argument("build_subgraphs: control grid larger than image");

  const int K = static_cast<int>(observations.size());
  SubgraphMap sub(control_h, control_w, K, true);
  for (const auto& o : observations) {
    auto it = masks.find(o.from);
    if (it == masks.end())
      throw std::invalid_argument("build_subgraphs: missing mask for a source node");
    const ImageSection* m = it->second;
    for (int r = 0; r < control_h; ++r)
      for (int c = 0; c < control_w; ++c) {
        int pr = control_h > 1
                     ? static_cast<int>(std::lround(static_cast<double>(r) * (H - 1) / (control_h - 1)))
                     : 0;
        int pc = control_w > 1
                     ? static_cast<int>(std::lround(static_cast<double>(c) * (W - 1) / (control_w - 1)))
                     : 0;
        if (!m->mask[pr * W + pc]) sub.set_active(r * control_w + c, o.index, false);
      }
  }
  return sub;
}

std::vector<std::vector<NodeId>> connected_components(
    const std::vector<NodeId>& nodes, const std::vector<ObservationEdge>& observations) {
  std::map<NodeId, int> ix;
  for (const auto& n : nodes) ix.emplace(n, 0);
  int c = 0;
  for (auto& [node, i] : ix) i = c++;
  std::vector<int> uf(c);
  std::iota(uf.begin(), uf.end(), 0);
  auto find = [&](int a) {
    while (uf[a] != a) a = uf[a] = uf[uf[a]];
    return a;
  };
  for (const auto& o : observations) {
    auto a = ix.find(o.from), b = ix.find(o.to);
    if (a == ix.end() || b == ix.end())
      throw std::invalid_argument("connected_components: observation endpoint not in node set");
    uf[find(a->second)] = find(b->second);
  }
  std::map<int, std::vector<NodeId>> comps;
  for (auto& [node, i] : ix) comps[find(i)].push_back(node);
  std::vector<std::vector<NodeId>> out;
  out.reserve(comps.size());
  for (auto& [root, members] : comps) out.push_back(std::move(members));
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

}  // namespace histrec
