#pragma once

#include "mmg/episode.hpp"

#include <string>
#include <utility>
#include <vector>

namespace mmg {

enum class NodeKind { Frame, Object, Text };
enum class EdgeKind { Temporal, Spatial, Semantic };

const char* to_string(NodeKind k);
const char* to_string(EdgeKind k);

struct GraphNode {
    NodeKind kind = NodeKind::Frame;
    Vector feature;        // current entry-level feature (graph space)
    int frame_index = -1;  // Frame and Object nodes only
    int object_index = -1; // Object nodes: position in the episode's object list
    std::string region_name;

    bool operator==(const GraphNode&) const;
};

struct GraphEdge {
    EdgeKind kind = EdgeKind::Temporal;
    int i = 0;
    int j = 0;
    double weight = 0.0;
    bool active = true;

    bool operator==(const GraphEdge&) const;
};

// Undirected typed multigraph-without-duplicates over one episode.
// Message passing reads `adjacency`, which indexes only active edges;
// call refresh_adjacency() after any change to edges or activity.
struct MultimodalGraph {
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;
    // adjacency[i] = (edge index, neighbor node) per active incident edge,
    // in edge-storage order.
    std::vector<std::vector<std::pair<int, int>>> adjacency;

    void refresh_adjacency();
    // Index of the edge joining i and j in either orientation, -1 if none.
    int find_edge(int i, int j) const;
    int count_nodes(NodeKind k) const;
    int count_edges(EdgeKind k, bool active_only) const;

    bool operator==(const MultimodalGraph& o) const {
        return nodes == o.nodes && edges == o.edges;
    }
};

struct GraphConfig {
    double spatial_threshold = 0.3;
    double semantic_threshold = 0.3;
    bool with_text = true;
};

// Plain (non-differentiable) cosine similarity used for construction-time
// edge weights.  Throws ZeroNormError on a degenerate vector.
double initial_edge_weight(const Vector& a, const Vector& b);

// Build the typed graph for one episode:
//  - one Frame node per frame, feature = the given (already temporally
//    aggregated) row of frame_features;
//  - one Object node per region per frame (attention-weighted patch
//    aggregate), connected to its frame by a containment Spatial edge;
//  - Object--Object Spatial edges within a frame when cosine similarity
//    reaches spatial_threshold;
//  - when with_text: one Text node carrying W_t * f_t, Semantic edges to
//    every Frame node (mandatory connectivity floor), and to Object nodes
//    whose projected similarity cos(W_v f_o, W_t f_t) reaches
//    semantic_threshold.  Text--Frame edges always exist, with the same
//    projected-similarity weight.
// Edge weights are cosine similarities of the compared features.
MultimodalGraph build_graph(const Episode& ep, const GraphConfig& cfg,
                            const Matrix& frame_features,
                            const Matrix& w_v, const Matrix& w_t);

// Prune weak edges and add strong ones, in place:
//  - active edges with weight < prune_threshold are deactivated, except
//    the fixed skeleton: Temporal edges, Frame--Object containment edges,
//    and the Text--Frame floor, which are never pruned;
//  - candidate pairs (same-frame Object pairs as Spatial, Text--Object as
//    Semantic) whose current feature cosine reaches add_threshold are
//    activated, reusing an existing inactive edge when present.
// Deterministic; refreshes adjacency before returning.
void adapt_topology(MultimodalGraph& g, double prune_threshold,
                    double add_threshold);

// DOT rendering with one visual style per node/edge kind; deterministic
// node and edge order.  Inactive edges are drawn dotted grey.
std::string export_dot(const MultimodalGraph& g);

// Machine-readable JSON export; import_graph inverts it exactly.
std::string export_structured(const MultimodalGraph& g);
MultimodalGraph import_graph(const std::string& text);

} // namespace mmg
