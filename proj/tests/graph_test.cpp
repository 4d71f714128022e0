// Graph construction counts, skeleton-respecting topology adaptation, and
// exact export/import round trips.

#include "mmg/errors.hpp"
#include "mmg/graph.hpp"
#include "mmg/rng.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

using namespace mmg;

namespace {

Matrix frame_means_of(const Episode& ep) {
    const auto T = static_cast<Eigen::Index>(ep.frames.size());
    Matrix m(T, ep.frames[0].patch_embeddings.cols());
    for (Eigen::Index t = 0; t < T; ++t)
        m.row(t) =
            frame_embedding(ep.frames[static_cast<std::size_t>(t)]
                                .patch_embeddings)
                .transpose();
    return m;
}

MultimodalGraph build_from(const Episode& ep, const GraphConfig& cfg) {
    const int d = static_cast<int>(ep.frames[0].patch_embeddings.cols());
    const int dt = static_cast<int>(ep.text_embedding.size());
    return build_graph(ep, cfg, frame_means_of(ep), Matrix::Identity(d, d),
                       Matrix::Identity(d, dt));
}

} // namespace

TEST_CASE("initial edge weights are plain cosines") {
    Vector u(2), v(2);
    u << 1, 2;
    v << 2, 1;
    CHECK(std::abs(initial_edge_weight(u, v) - 0.8) < 1e-12);
    CHECK(std::abs(initial_edge_weight(u, u * 3.0) - 1.0) < 1e-12);
    CHECK(std::abs(initial_edge_weight(u, -u) + 1.0) < 1e-12);
    CHECK_THROWS_AS(initial_edge_weight(u, Vector::Zero(2)), ZeroNormError);
    CHECK_THROWS_AS(initial_edge_weight(u, Vector::Zero(3)), ShapeError);
}

TEST_CASE("construction counts") {
    SUBCASE("frames, objects and the temporal chain") {
        const Episode ep = oracle::test_episode(4, 8, 2, 6, 6, 21);
        const MultimodalGraph g = build_from(ep, {0.3, 0.3, false});
        CHECK(g.count_nodes(NodeKind::Frame) == 4);
        CHECK(g.count_nodes(NodeKind::Object) == 8);
        CHECK(g.count_nodes(NodeKind::Text) == 0);
        CHECK(g.count_edges(EdgeKind::Temporal, false) == 3);
        CHECK(g.count_edges(EdgeKind::Semantic, false) == 0);
        // Containment edges: one per object.
        int containment = 0;
        for (const auto& e : g.edges)
            if (e.kind == EdgeKind::Spatial &&
                (g.nodes[static_cast<std::size_t>(e.i)].kind ==
                     NodeKind::Frame ||
                 g.nodes[static_cast<std::size_t>(e.j)].kind ==
                     NodeKind::Frame))
                ++containment;
        CHECK(containment == 8);
    }
    SUBCASE("a permissive spatial threshold links every same-frame pair") {
        const Episode ep = oracle::test_episode(1, 8, 3, 6, 6, 22);
        const MultimodalGraph g = build_from(ep, {-1.0, 0.3, false});
        int pairs = 0;
        for (const auto& e : g.edges)
            if (e.kind == EdgeKind::Spatial &&
                g.nodes[static_cast<std::size_t>(e.i)].kind ==
                    NodeKind::Object &&
                g.nodes[static_cast<std::size_t>(e.j)].kind ==
                    NodeKind::Object)
                ++pairs;
        CHECK(pairs == 3);  // C(3,2)
    }
    SUBCASE("an impossible spatial threshold links none") {
        const Episode ep = oracle::test_episode(1, 8, 3, 6, 6, 23);
        const MultimodalGraph g = build_from(ep, {1.0, 0.3, false});
        int pairs = 0;
        for (const auto& e : g.edges)
            if (e.kind == EdgeKind::Spatial &&
                g.nodes[static_cast<std::size_t>(e.i)].kind ==
                    NodeKind::Object &&
                g.nodes[static_cast<std::size_t>(e.j)].kind ==
                    NodeKind::Object)
                ++pairs;
        CHECK(pairs == 0);
    }
    SUBCASE("the text node connects to every frame") {
        const Episode ep = oracle::test_episode(3, 8, 1, 6, 6, 24);
        const MultimodalGraph g = build_from(ep, {0.3, 0.3, true});
        CHECK(g.count_nodes(NodeKind::Text) == 1);
        int text_frame = 0;
        for (const auto& e : g.edges)
            if (e.kind == EdgeKind::Semantic) {
                const auto& a = g.nodes[static_cast<std::size_t>(e.i)];
                const auto& b = g.nodes[static_cast<std::size_t>(e.j)];
                text_frame += (a.kind == NodeKind::Text &&
                               b.kind == NodeKind::Frame) ||
                              (b.kind == NodeKind::Text &&
                               a.kind == NodeKind::Frame);
            }
        CHECK(text_frame == 3);
    }
    SUBCASE("a two-frame one-object episode enumerates exactly") {
        const Episode ep = oracle::test_episode(2, 8, 1, 6, 6, 25);
        const MultimodalGraph g = build_from(ep, {0.3, -1.0, true});
        // 1 temporal + 2 containment + 2 text-frame + 2 text-object (the
        // semantic threshold of -1 admits every object).
        CHECK(g.count_edges(EdgeKind::Temporal, false) == 1);
        CHECK(g.count_edges(EdgeKind::Semantic, false) == 4);
        CHECK(static_cast<int>(g.edges.size()) == 7);
    }
    SUBCASE("no frames, no graph") {
        Episode empty;
        empty.text_embedding = Vector::Ones(4);
        CHECK_THROWS_AS(build_graph(empty, {0.3, 0.3, true}, Matrix(0, 4),
                                    Matrix::Identity(4, 4),
                                    Matrix::Identity(4, 4)),
                        Error);
    }
}

TEST_CASE("adjacency and lookups") {
    const Episode ep = oracle::test_episode(3, 8, 1, 6, 6, 31);
    MultimodalGraph g = build_from(ep, {0.3, 0.3, true});
    SUBCASE("find_edge sees both orientations") {
        const GraphEdge& e = g.edges[0];
        CHECK(g.find_edge(e.i, e.j) == 0);
        CHECK(g.find_edge(e.j, e.i) == 0);
        CHECK(g.find_edge(0, 0) == -1);
    }
    SUBCASE("deactivated edges drop out of adjacency") {
        const GraphEdge e = g.edges[0];
        const auto degree_before =
            g.adjacency[static_cast<std::size_t>(e.i)].size();
        g.edges[0].active = false;
        g.refresh_adjacency();
        CHECK(g.adjacency[static_cast<std::size_t>(e.i)].size() ==
              degree_before - 1);
        for (const auto& [edge, nbr] : g.adjacency[static_cast<std::size_t>(e.i)])
            CHECK(edge != 0);
    }
}

TEST_CASE("topology adaptation") {
    const Episode ep = oracle::test_episode(3, 8, 2, 6, 6, 41);

    SUBCASE("weak non-skeleton edges are deactivated, skeleton survives") {
        MultimodalGraph g = build_from(ep, {-1.0, -1.0, true});
        // Make one object-object spatial edge weak and one text-object
        // semantic edge weak; push a containment and a temporal edge just
        // as low to prove the skeleton exemption.
        int weakened = 0;
        for (auto& e : g.edges) {
            const bool obj_obj =
                g.nodes[static_cast<std::size_t>(e.i)].kind ==
                    NodeKind::Object &&
                g.nodes[static_cast<std::size_t>(e.j)].kind ==
                    NodeKind::Object;
            const bool to_text =
                g.nodes[static_cast<std::size_t>(e.i)].kind ==
                    NodeKind::Text ||
                g.nodes[static_cast<std::size_t>(e.j)].kind ==
                    NodeKind::Text;
            const bool containment =
                e.kind == EdgeKind::Spatial && !obj_obj;
            const bool text_obj =
                e.kind == EdgeKind::Semantic && to_text &&
                (g.nodes[static_cast<std::size_t>(e.i)].kind ==
                     NodeKind::Object ||
                 g.nodes[static_cast<std::size_t>(e.j)].kind ==
                     NodeKind::Object);
            if (obj_obj || containment || text_obj ||
                e.kind == EdgeKind::Temporal) {
                e.weight = 0.05;
                ++weakened;
            }
        }
        REQUIRE(weakened > 0);
        adapt_topology(g, 0.1, 2.0);  // add threshold too high to fire
        for (const auto& e : g.edges) {
            const bool obj_obj =
                g.nodes[static_cast<std::size_t>(e.i)].kind ==
                    NodeKind::Object &&
                g.nodes[static_cast<std::size_t>(e.j)].kind ==
                    NodeKind::Object;
            const bool text_obj =
                e.kind == EdgeKind::Semantic &&
                (g.nodes[static_cast<std::size_t>(e.i)].kind ==
                     NodeKind::Object ||
                 g.nodes[static_cast<std::size_t>(e.j)].kind ==
                     NodeKind::Object);
            if (e.kind == EdgeKind::Temporal)
                CHECK(e.active);  // never pruned
            else if (obj_obj || text_obj)
                CHECK_FALSE(e.active);  // weak and expendable
            else
                CHECK(e.active);  // containment and text-frame floor
        }
        CHECK(g.count_edges(EdgeKind::Temporal, true) == 2);
    }

    SUBCASE("a hostile prune threshold removes nothing") {
        MultimodalGraph g = build_from(ep, {0.3, 0.3, true});
        const int active_before = g.count_edges(EdgeKind::Spatial, true) +
                                  g.count_edges(EdgeKind::Temporal, true) +
                                  g.count_edges(EdgeKind::Semantic, true);
        adapt_topology(g, -2.0, 2.0);
        const int active_after = g.count_edges(EdgeKind::Spatial, true) +
                                 g.count_edges(EdgeKind::Temporal, true) +
                                 g.count_edges(EdgeKind::Semantic, true);
        CHECK(active_after == active_before);
    }

    SUBCASE("an unreachable add threshold adds nothing") {
        MultimodalGraph g = build_from(ep, {0.3, 0.3, true});
        const auto edges_before = g.edges.size();
        adapt_topology(g, -2.0, 1.01);
        CHECK(g.edges.size() == edges_before);
    }

    SUBCASE("near-identical features create or revive edges") {
        MultimodalGraph g = build_from(ep, {0.99, 0.99, true});
        // Force the two objects of frame 0 onto the same direction; the
        // 0.99 build threshold left them unlinked.
        int first = -1, second = -1;
        for (std::size_t i = 0; i < g.nodes.size(); ++i)
            if (g.nodes[i].kind == NodeKind::Object &&
                g.nodes[i].frame_index == 0) {
                (first < 0 ? first : second) = static_cast<int>(i);
            }
        REQUIRE(second >= 0);
        CHECK(g.find_edge(first, second) == -1);
        g.nodes[static_cast<std::size_t>(second)].feature =
            g.nodes[static_cast<std::size_t>(first)].feature * 2.0;
        adapt_topology(g, 0.1, 0.8);
        const int e = g.find_edge(first, second);
        REQUIRE(e >= 0);
        CHECK(g.edges[static_cast<std::size_t>(e)].active);
        CHECK(g.edges[static_cast<std::size_t>(e)].kind == EdgeKind::Spatial);

        // Deactivate it and adapt again: the same edge revives in place
        // instead of duplicating.
        const auto edge_count = g.edges.size();
        g.edges[static_cast<std::size_t>(e)].active = false;
        adapt_topology(g, 0.1, 0.8);
        CHECK(g.edges.size() == edge_count);
        CHECK(g.edges[static_cast<std::size_t>(e)].active);
    }

    SUBCASE("the text-frame floor is re-enforced") {
        MultimodalGraph g = build_from(ep, {0.3, 0.3, true});
        for (auto& e : g.edges)
            if (e.kind == EdgeKind::Semantic) e.active = false;
        g.refresh_adjacency();
        adapt_topology(g, 0.1, 2.0);
        int active_floor = 0;
        for (const auto& e : g.edges)
            if (e.kind == EdgeKind::Semantic && e.active &&
                (g.nodes[static_cast<std::size_t>(e.i)].kind ==
                     NodeKind::Frame ||
                 g.nodes[static_cast<std::size_t>(e.j)].kind ==
                     NodeKind::Frame))
                ++active_floor;
        CHECK(active_floor == 3);
    }

    SUBCASE("thresholds must leave a gap") {
        MultimodalGraph g = build_from(ep, {0.3, 0.3, true});
        CHECK_THROWS_AS(adapt_topology(g, 0.8, 0.8), ConfigError);
        CHECK_THROWS_AS(adapt_topology(g, 0.9, 0.1), ConfigError);
    }
}

TEST_CASE("ten adaptation rounds keep the temporal chain intact") {
    Rng rng(55);
    for (int trial = 0; trial < 5; ++trial) {
        const int T = 2 + static_cast<int>(rng.below(4));
        const Episode ep = oracle::test_episode(
            T, 8, 1 + static_cast<int>(rng.below(2)), 5, 5,
            100 + static_cast<std::uint64_t>(trial));
        MultimodalGraph g = build_from(ep, {0.2, 0.2, true});
        for (int round = 0; round < 10; ++round) {
            // Jitter the stored weights the way refinement would.
            for (auto& e : g.edges) e.weight += rng.uniform(-0.3, 0.3);
            adapt_topology(g, 0.1, 0.8);
            CHECK(g.count_edges(EdgeKind::Temporal, true) == T - 1);
            CHECK(g.count_edges(EdgeKind::Temporal, false) == T - 1);
        }
    }
}

TEST_CASE("structured export and import invert each other") {
    const Episode ep = oracle::test_episode(3, 8, 2, 6, 6, 61);
    MultimodalGraph g = build_from(ep, {0.0, 0.0, true});
    g.edges[2].active = false;
    g.refresh_adjacency();

    const std::string text = export_structured(g);
    const MultimodalGraph back = import_graph(text);
    CHECK(back == g);
    CHECK(export_structured(back) == text);

    SUBCASE("malformed input is a format error") {
        CHECK_THROWS_AS(import_graph("not json"), FormatError);
        CHECK_THROWS_AS(import_graph("{\"nodes\":[]}"), FormatError);
        CHECK_THROWS_AS(
            import_graph(
                "{\"nodes\":[{\"kind\":\"blob\",\"frame_index\":0,"
                "\"object_index\":-1,\"region\":\"\",\"feature\":[1.0]}],"
                "\"edges\":[]}"),
            FormatError);
    }
    SUBCASE("dangling endpoints are caught") {
        const std::string bad =
            "{\"nodes\":[{\"kind\":\"frame\",\"frame_index\":0,"
            "\"object_index\":-1,\"region\":\"\",\"feature\":[1.0,0.0]}],"
            "\"edges\":[{\"kind\":\"temporal\",\"i\":0,\"j\":5,"
            "\"weight\":1.0,\"active\":true}]}";
        CHECK_THROWS_AS(import_graph(bad), IndexError);
    }
}

TEST_CASE("DOT export") {
    const Episode ep = oracle::test_episode(2, 8, 1, 6, 6, 71);
    MultimodalGraph g = build_from(ep, {0.3, 0.3, true});
    const std::string dot = export_dot(g);
    CHECK(dot == export_dot(g));  // deterministic
    CHECK(dot.find("f0") != std::string::npos);
    CHECK(dot.find("f1") != std::string::npos);
    CHECK(dot.find("txt") != std::string::npos);
    CHECK(dot.find("o0") != std::string::npos);

    SUBCASE("inactive edges render dotted") {
        REQUIRE_FALSE(g.edges.empty());
        g.edges[0].active = false;
        CHECK(export_dot(g).find("dotted") != std::string::npos);
    }
    SUBCASE("an object-free episode still renders frames and text") {
        const Episode bare = oracle::test_episode(3, 8, 0, 6, 6, 72);
        const MultimodalGraph gb = build_from(bare, {0.3, 0.3, true});
        CHECK(gb.count_nodes(NodeKind::Frame) == 3);
        CHECK(gb.count_nodes(NodeKind::Object) == 0);
        CHECK(gb.count_nodes(NodeKind::Text) == 1);
        const std::string d = export_dot(gb);
        CHECK(d.find("f2") != std::string::npos);
        CHECK(d.find("txt") != std::string::npos);
    }
}
