#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "histrec/graph.hpp"

using namespace histrec;

namespace {

std::vector<NodeId> regular_nodes(int N, int C) {
  std::vector<NodeId> nodes;
  for (int c = 0; c <= C; ++c)
    for (int n = 1; n <= N; ++n) nodes.push_back({c, n});
  return nodes;
}

Eigen::MatrixXd dense(const PathMatrix& W) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(W.rows, W.cols);
  for (int k = 0; k < W.rows; ++k)
    for (auto& [l, s] : W.row[k].entries) M(k, l) = s;
  return M;
}

}  // namespace

TEST_CASE("spanning tree sizes and directions") {
  SUBCASE("regular N=3, C=2 has L = N(C+1)-1 = 8") {
    auto tree = build_spanning_tree(regular_nodes(3, 2));
    CHECK(tree.size() == 8);
    int chains = 0, spokes = 0;
    for (const auto& e : tree) {
      if (e.is_spoke()) {
        ++spokes;
        CHECK(e.from.contrast == 0);
        CHECK(e.from.level == e.to.level);
      } else {
        ++chains;
        CHECK(e.from.contrast == 0);
        CHECK(e.to.level == e.from.level + 1);
      }
    }
    CHECK(chains == 2);
    CHECK(spokes == 6);
  }
  SUBCASE("single reference slice has no edges") {
    CHECK(build_spanning_tree({{0, 1}}).empty());
  }
  SUBCASE("missing histology node drops one spoke") {
    auto nodes = regular_nodes(3, 2);
    std::erase(nodes, NodeId{2, 2});
    CHECK(build_spanning_tree(nodes).size() == 7);
  }
  SUBCASE("histology without a reference at its level is an error") {
    CHECK_THROWS_AS(build_spanning_tree({{0, 1}, {1, 1}, {1, 2}}), std::invalid_argument);
  }
}

TEST_CASE("observation graph counts and metadata") {
  SUBCASE("N=3, C=2, P=1 gives K = 9 + 6 = 15") {
    auto obs = build_observation_graph(regular_nodes(3, 2), 1);
    CHECK(obs.size() == 15);
    int inter = 0, intra = 0;
    for (const auto& o : obs) {
      if (o.inter_flag) {
        ++inter;
        for (double d : o.separations) CHECK(d == 0.0);
      } else {
        ++intra;
        CHECK(o.separations[o.from.contrast] == o.to.level - o.from.level);
      }
    }
    CHECK(inter == 9);
    CHECK(intra == 6);
  }
  SUBCASE("P=0 keeps intermodality edges only") {
    auto obs = build_observation_graph(regular_nodes(4, 2), 0);
    for (const auto& o : obs) CHECK(o.inter_flag == 1);
    CHECK(obs.size() == 4 * 3);
  }
  SUBCASE("N=2, C=0, P=1 observes the single chain edge") {
    CHECK(build_observation_graph(regular_nodes(2, 0), 1).size() == 1);
  }
  SUBCASE("deterministic ordering: inter by (n,c,c'), then intra by (c,n,n')") {
    auto obs = build_observation_graph(regular_nodes(3, 1), 2);
    CHECK(obs[0].from == NodeId{0, 1});
    CHECK(obs[0].to == NodeId{1, 1});
    CHECK(obs[1].from == NodeId{0, 2});
    CHECK(obs[2].from == NodeId{0, 3});
    CHECK(obs[3].inter_flag == 0);
    CHECK(obs[3].from == NodeId{0, 1});
    CHECK(obs[3].to == NodeId{0, 2});
    CHECK(obs[4].to == NodeId{0, 3});  // span-2 comes after span-1 of the same source
  }
}

TEST_CASE("path matrix rows trace the tree paths") {
  auto nodes = regular_nodes(3, 2);
  auto tree = build_spanning_tree(nodes);
  auto obs = build_observation_graph(nodes, 2);
  PathMatrix W = build_path_matrix(tree, obs);
  CHECK(W.rows == static_cast<int>(obs.size()));
  CHECK(W.cols == 8);

  auto edge_ix = [&](NodeId from, NodeId to) {
    for (const auto& e : tree)
      if (e.from == from && e.to == to) return e.index;
    FAIL("edge not found");
    return -1;
  };
  auto obs_ix = [&](NodeId from, NodeId to) {
    for (const auto& o : obs)
      if (o.from == from && o.to == to) return o.index;
    FAIL("observation not found");
    return -1;
  };

  SUBCASE("spoke-coincident observation has a single +1") {
    int k = obs_ix({0, 2}, {1, 2});
    CHECK(W.row[k].entries.size() == 1);
    CHECK(W.entry(k, edge_ix({0, 2}, {1, 2})) == 1.0);
  }
  SUBCASE("histology-to-histology observation is -spoke +spoke") {
    int k = obs_ix({1, 2}, {2, 2});
    CHECK(W.row[k].entries.size() == 2);
    CHECK(W.entry(k, edge_ix({0, 2}, {1, 2})) == -1.0);
    CHECK(W.entry(k, edge_ix({0, 2}, {2, 2})) == 1.0);
  }
  SUBCASE("intra-histology neighbour goes -spoke +chain +spoke") {
    int k = obs_ix({1, 2}, {1, 3});
    CHECK(W.row[k].entries.size() == 3);
    CHECK(W.entry(k, edge_ix({0, 2}, {1, 2})) == -1.0);
    CHECK(W.entry(k, edge_ix({0, 2}, {0, 3})) == 1.0);
    CHECK(W.entry(k, edge_ix({0, 3}, {1, 3})) == 1.0);
  }
  SUBCASE("chain observation of span d has d +1 entries") {
    int k = obs_ix({0, 1}, {0, 3});
    CHECK(W.row[k].entries.size() == 2);
    CHECK(W.entry(k, edge_ix({0, 1}, {0, 2})) == 1.0);
    CHECK(W.entry(k, edge_ix({0, 2}, {0, 3})) == 1.0);
  }
  SUBCASE("paths telescope: summed level/contrast increments match endpoints") {
    for (const auto& o : obs) {
      int dl = 0, dc = 0;
      for (auto& [l, s] : W.row[o.index].entries) {
        dl += s * (tree[l].to.level - tree[l].from.level);
        dc += s * (tree[l].to.contrast - tree[l].from.contrast);
      }
      CHECK(dl == o.to.level - o.from.level);
      CHECK(dc == o.to.contrast - o.from.contrast);
    }
  }
  SUBCASE("full regular graph with P>=1 has full column rank") {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(dense(W));
    CHECK(lu.rank() == W.cols);
  }
  SUBCASE("reversing an observation negates its row") {
    auto rev = obs;
    std::swap(rev[4].from, rev[4].to);
    PathMatrix W2 = build_path_matrix(tree, rev);
    for (int l = 0; l < W.cols; ++l) CHECK(W2.entry(4, l) == -W.entry(4, l));
  }
}

TEST_CASE("mask-driven subgraphs gate on the source node") {
  auto nodes = regular_nodes(2, 1);
  auto obs = build_observation_graph(nodes, 1);
  std::map<NodeId, ImageSection> imgs;
  for (const auto& n : nodes) imgs.emplace(n, ImageSection::blank(8, 8));

  SUBCASE("all-ones masks keep every row active everywhere") {
    std::map<NodeId, const ImageSection*> masks;
    for (auto& [n, img] : imgs) masks.emplace(n, &img);
    SubgraphMap sub = build_subgraphs(masks, 4, 4, obs);
    for (int loc = 0; loc < 16; ++loc) CHECK(sub.count(loc) == static_cast<int>(obs.size()));
  }
  SUBCASE("zeroed source mask deactivates exactly the rows sourced there") {
    imgs.at({1, 1}).mask.assign(64, 0);
    std::map<NodeId, const ImageSection*> masks;
    for (auto& [n, img] : imgs) masks.emplace(n, &img);
    SubgraphMap sub = build_subgraphs(masks, 4, 4, obs);
    for (const auto& o : obs) {
      bool sourced = o.from == NodeId{1, 1};
      for (int loc = 0; loc < 16; ++loc) CHECK(sub.active(loc, o.index) == !sourced);
    }
  }
  SUBCASE("checkerboard mask alternates the count of rows sourced at the section") {
    ImageSection& m = imgs.at({0, 1});
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) m.mask[r * 8 + c] = (r + c) % 2;
    int sourced = 0;
    for (const auto& o : obs) sourced += o.from == NodeId{0, 1} ? 1 : 0;
    std::map<NodeId, const ImageSection*> masks;
    for (auto& [n, img] : imgs) masks.emplace(n, &img);
    // Each control point gates on the parity of its nearest pixel, so the
    // count drops by `sourced` exactly where that pixel has mask 0.
    SubgraphMap sub = build_subgraphs(masks, 4, 4, obs);
    auto near = [](int i) { return static_cast<int>(std::lround(i * 7.0 / 3.0)); };
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        int expect = static_cast<int>(obs.size()) -
                     ((near(r) + near(c)) % 2 == 0 ? sourced : 0);
        CHECK(sub.count(r * 4 + c) == expect);
      }
  }
}

TEST_CASE("connected components split at gaps wider than P") {
  SUBCASE("regular stack with P>=1 is one slab") {
    auto nodes = regular_nodes(5, 1);
    auto obs = build_observation_graph(nodes, 1);
    CHECK(connected_components(nodes, obs).size() == 1);
  }
  SUBCASE("a gap larger than P splits the stack") {
    std::vector<NodeId> nodes;
    for (int n : {1, 2, 3, 7, 8}) {
      nodes.push_back({0, n});
      nodes.push_back({1, n});
    }
    auto obs = build_observation_graph(nodes, 2);
    auto comps = connected_components(nodes, obs);
    CHECK(comps.size() == 2);
    CHECK(comps[0].size() == 6);
    CHECK(comps[1].size() == 4);
  }
  SUBCASE("P=0, C=0 gives one component per level") {
    auto nodes = regular_nodes(4, 0);
    auto obs = build_observation_graph(nodes, 0);
    CHECK(connected_components(nodes, obs).size() == 4);
  }
}
