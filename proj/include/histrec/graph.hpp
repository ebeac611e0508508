#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "histrec/svf.hpp"

namespace histrec {

/// (contrast, level) node. Contrast 0 is the reference stack.
struct NodeId {
  int contrast = 0;
  int level = 1;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

/// Latent-transform edge of the spanning tree. Reference chain edges point
/// (0,n) -> (0,n+1); spoke edges point (0,n) -> (c,n), c >= 1.
struct TreeEdge {
  int index = 0;  // 0-based position in the edge list
  NodeId from;
  NodeId to;
  bool is_spoke() const { return to.contrast != 0; }
};

/// One observed pairwise registration. `inter_flag` is 1 iff the endpoints
/// have different contrasts; `separations[c]` is the level separation for an
/// intramodality edge of contrast c (at most one entry nonzero, and only when
/// inter_flag == 0). The svf payload may be empty during pure graph analysis.
struct ObservationEdge {
  int index = 0;
  NodeId from;
  NodeId to;
  int inter_flag = 0;
  std::vector<double> separations;  // size = num_contrasts + 1
  SvfField svf;
};

/// Signed sparse row of the K x L path matrix: (tree edge index, +-1).
struct PathRow {
  std::vector<std::pair<int, int>> entries;
};

struct PathMatrix {
  int rows = 0;  // K
  int cols = 0;  // L
  std::vector<PathRow> row;

  double entry(int k, int l) const {
    for (auto& [col, sign] : row[k].entries)
      if (col == l) return sign;
    return 0.0;
  }
};

/// Per control-point active observation rows, stored as packed bitsets.
class SubgraphMap {
public:
  SubgraphMap() = default;
  SubgraphMap(int h, int w, int num_rows, bool all_active = true);

  int height() const { return h_; }
  int width() const { return w_; }
  int num_rows() const { return k_; }
  int blocks_per_loc() const { return blocks_; }

  bool active(int loc, int k) const {
    return (bits_[static_cast<size_t>(loc) * blocks_ + (k >> 6)] >> (k & 63)) & 1u;
  }
  void set_active(int loc, int k, bool v);
  int count(int loc) const;
  /// Pointer to the packed key of a location, `blocks_per_loc()` words long.
  const std::uint64_t* key(int loc) const { return bits_.data() + static_cast<size_t>(loc) * blocks_; }

private:
  int h_ = 0, w_ = 0, k_ = 0, blocks_ = 0;
  std::vector<std::uint64_t> bits_;
};

/// Canonical spanning tree: chain edges between consecutive present reference
/// levels, then spoke edges sorted by (contrast, level). Throws if a
/// histology node has no reference node at its level.
std::vector<TreeEdge> build_spanning_tree(const std::vector<NodeId>& nodes);

/// Intermodality edges for every present pair (c,n),(c',n) with c < c'
/// (sorted by level, then contrast pair), followed by intramodality edges
/// (c,n)->(c,n') with 0 < n'-n <= P (sorted by contrast, then level pair).
/// SVF payloads are left empty.
std::vector<ObservationEdge> build_observation_graph(const std::vector<NodeId>& nodes, int P);

PathMatrix build_path_matrix(const std::vector<TreeEdge>& tree,
                             const std::vector<ObservationEdge>& observations);

/// Mask gating at control-point resolution: observation row k is active at a
/// control point iff the source node's mask is 1 at the nearest image pixel.
/// `masks` maps each node to its mask image; all masks share image dims.
SubgraphMap build_subgraphs(const std::map<NodeId, const ImageSection*>& masks,
                            int control_h, int control_w,
                            const std::vector<ObservationEdge>& observations);

/// Connected components of the observation graph (slabs), each sorted; the
/// component list is ordered by smallest member node.
std::vector<std::vector<NodeId>> connected_components(
    const std::vector<NodeId>& nodes, const std::vector<ObservationEdge>& observations);

int max_contrast(const std::vector<NodeId>& nodes);

}  // namespace histrec
