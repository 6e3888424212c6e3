#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "sgdet/errors.hpp"
#include "sgdet/graph.hpp"
#include "test_util.hpp"

using namespace sgdet;
using sgdet::testing::random_tensor;

namespace {

// Brute force: sort all other nodes by (distance, index).
EdgeList brute_knn(const Tensor& x, std::size_t k) {
  const std::size_t c = x.dim(0), l = x.dim(1);
  EdgeList out;
  for (std::size_t i = 0; i < l; ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < l; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) s += (x.at(ch, i) - x.at(ch, j)) * (x.at(ch, i) - x.at(ch, j));
      d.push_back({s, j});
    }
    std::sort(d.begin(), d.end());
    for (std::size_t n = 0; n < k; ++n) out.push_back({d[n].second, i});
  }
  return out;
}

}  // namespace

TEST_CASE("temporal adjacency columns") {
  const auto a = temporal_adjacency(3);
  // forward: column j holds e_{j+1}
  const double f[9] = {0, 0, 0, 1, 0, 0, 0, 1, 0};
  const double b[9] = {0, 1, 0, 0, 0, 1, 0, 0, 0};
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(a.forward.data()[i] == f[i]);
    CHECK(a.backward.data()[i] == b[i]);
  }
  const auto one = temporal_adjacency(1);
  CHECK(one.forward.data()[0] == 0.0);
  CHECK(one.backward.data()[0] == 0.0);
  CHECK_THROWS_AS(temporal_adjacency(0), ConfigError);
}

TEST_CASE("temporal adjacency transpose identity and indexing") {
  for (std::size_t l : {1u, 2u, 5u, 17u}) {
    const auto a = temporal_adjacency(l);
    const Tensor t = transpose(a.backward);
    for (std::size_t i = 0; i < l * l; ++i) CHECK(a.forward.data()[i] == t.data()[i]);
    for (std::size_t i = 0; i < l; ++i) CHECK(a.forward.at(i, i) == 0.0);
  }
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({3, 5}, rng);
  const Tensor y = matmul(x, temporal_adjacency(5).forward);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t k = 0; k + 1 < 5; ++k) CHECK(y.at(c, k) == x.at(c, k + 1));
    CHECK(y.at(c, 4) == 0.0);
  }
}

TEST_CASE("knn hand example and tie-break") {
  const Tensor x = Tensor::from_vector({1, 3}, {0.0, 0.1, 10.0});
  const EdgeList e = knn_semantic_edges(x, 1);
  REQUIRE(e.size() == 3);
  CHECK(e[0] == Edge{1, 0});
  CHECK(e[1] == Edge{0, 1});
  CHECK(e[2] == Edge{1, 2});

  const EdgeList same = knn_semantic_edges(Tensor::full({2, 4}, 1.0), 2);
  const auto table = neighbor_table(same, 4);
  CHECK(table[0] == std::vector<std::size_t>{1, 2});
  CHECK(table[1] == std::vector<std::size_t>{0, 2});
  CHECK(table[3] == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(knn_semantic_edges(x, 3), ConfigError);
}

TEST_CASE("knn matches brute force, no self loops, K in-edges per node") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t l = 5 + seed % 20, k = 1 + seed % 4;
    const Tensor x = random_tensor({6, l}, rng);
    const EdgeList e = knn_semantic_edges(x, k);
    CHECK(e == brute_knn(x, k));
    CHECK(e.size() == k * l);
    for (const auto& edge : e) CHECK(edge.source != edge.target);
    const Tensor a = semantic_adjacency(e, l);
    for (std::size_t j = 0; j < l; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < l; ++i) col += a.at(i, j);
      CHECK(col == static_cast<double>(k));
      CHECK(a.at(j, j) == 0.0);
    }
    CHECK(knn_semantic_edges(x, k) == e);
  }
}

TEST_CASE("knn is permutation equivariant") {
  std::mt19937_64 rng(7);
  const std::size_t l = 12;
  const Tensor x = random_tensor({4, l}, rng);
  std::vector<std::size_t> perm(l);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  // column p of xp is column perm[p] of x
  std::vector<double> v(4 * l);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t p = 0; p < l; ++p) v[c * l + p] = x.at(c, perm[p]);
  const Tensor xp = Tensor::from_vector({4, l}, v);
  const auto t = neighbor_table(knn_semantic_edges(x, 3), l);
  const auto tp = neighbor_table(knn_semantic_edges(xp, 3), l);
  for (std::size_t p = 0; p < l; ++p) {
    REQUIRE(tp[p].size() == 3);
    for (std::size_t n = 0; n < 3; ++n) CHECK(perm[tp[p][n]] == t[perm[p]][n]);
  }
}

TEST_CASE("semantic adjacency") {
  CHECK(sum(semantic_adjacency({}, 3)).item() == 0.0);
  CHECK_THROWS_AS(semantic_adjacency({{0, 5}}, 3), DataError);
}

TEST_CASE("graph json export") {
  VideoGraph g;
  g.length = 3;
  g.k = 1;
  g.temporal = temporal_adjacency(3);
  g.semantic_layers = {{{1, 0}, {0, 1}, {1, 2}}};
  const auto j = graph_to_json(g);
  CHECK(j["L"] == 3);
  CHECK(j["K"] == 1);
  CHECK(j["layers"][0].size() == 3);
  CHECK(j["layers"][0][2] == nlohmann::json::array({1, 2}));
  CHECK(graph_to_dot(g).find("digraph") != std::string::npos);
}
