#include "mmg/graph.hpp"

#include "mmg/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <sstream>

namespace mmg {

using nlohmann::json;

const char* to_string(NodeKind k) {
    switch (k) {
        case NodeKind::Frame: return "frame";
        case NodeKind::Object: return "object";
        case NodeKind::Text: return "text";
    }
    return "?";
}

const char* to_string(EdgeKind k) {
    switch (k) {
        case EdgeKind::Temporal: return "temporal";
        case EdgeKind::Spatial: return "spatial";
        case EdgeKind::Semantic: return "semantic";
    }
    return "?";
}

bool GraphNode::operator==(const GraphNode& o) const {
    return kind == o.kind && frame_index == o.frame_index &&
           object_index == o.object_index && region_name == o.region_name &&
           feature.size() == o.feature.size() && feature == o.feature;
}

bool GraphEdge::operator==(const GraphEdge& o) const {
    return kind == o.kind && i == o.i && j == o.j && weight == o.weight &&
           active == o.active;
}

void MultimodalGraph::refresh_adjacency() {
    adjacency.assign(nodes.size(), {});
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const GraphEdge& ed = edges[e];
        if (!ed.active) continue;
        adjacency[static_cast<std::size_t>(ed.i)].emplace_back(
            static_cast<int>(e), ed.j);
        adjacency[static_cast<std::size_t>(ed.j)].emplace_back(
            static_cast<int>(e), ed.i);
    }
}

int MultimodalGraph::find_edge(int i, int j) const {
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const GraphEdge& ed = edges[e];
        if ((ed.i == i && ed.j == j) || (ed.i == j && ed.j == i))
            return static_cast<int>(e);
    }
    return -1;
}

int MultimodalGraph::count_nodes(NodeKind k) const {
    int n = 0;
    for (const GraphNode& nd : nodes)
        if (nd.kind == k) ++n;
    return n;
}

int MultimodalGraph::count_edges(EdgeKind k, bool active_only) const {
    int n = 0;
    for (const GraphEdge& e : edges)
        if (e.kind == k && (!active_only || e.active)) ++n;
    return n;
}

double initial_edge_weight(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        throw ShapeError("initial_edge_weight: dimensions differ (" +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
    const double na = a.norm();
    const double nb = b.norm();
    if (na < 1e-12 || nb < 1e-12)
        throw ZeroNormError("initial_edge_weight: zero-norm feature");
    return a.dot(b) / (na * nb);
}

namespace {

// Cosine with the fallback policy: degenerate vectors simply look
// dissimilar instead of aborting topology updates.
double safe_cos(const Vector& a, const Vector& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na < 1e-12 || nb < 1e-12) return 0.0;
    return a.dot(b) / (na * nb);
}

bool is_containment(const MultimodalGraph& g, const GraphEdge& e) {
    const NodeKind a = g.nodes[static_cast<std::size_t>(e.i)].kind;
    const NodeKind b = g.nodes[static_cast<std::size_t>(e.j)].kind;
    return e.kind == EdgeKind::Spatial &&
           ((a == NodeKind::Frame && b == NodeKind::Object) ||
            (a == NodeKind::Object && b == NodeKind::Frame));
}

bool is_text_frame(const MultimodalGraph& g, const GraphEdge& e) {
    const NodeKind a = g.nodes[static_cast<std::size_t>(e.i)].kind;
    const NodeKind b = g.nodes[static_cast<std::size_t>(e.j)].kind;
    return e.kind == EdgeKind::Semantic &&
           ((a == NodeKind::Text && b == NodeKind::Frame) ||
            (a == NodeKind::Frame && b == NodeKind::Text));
}

} // namespace

MultimodalGraph build_graph(const Episode& ep, const GraphConfig& cfg,
                            const Matrix& frame_features,
                            const Matrix& w_v, const Matrix& w_t) {
    if (ep.frames.empty())
        throw Error("build_graph: episode has no frames");
    validate_episode(ep);
    const auto T = static_cast<int>(ep.frames.size());
    if (frame_features.rows() != T)
        throw ShapeError("build_graph: " + std::to_string(T) +
                         " frames but " +
                         std::to_string(frame_features.rows()) +
                         " feature rows");

    MultimodalGraph g;

    // Frame nodes first, in time order.
    for (int t = 0; t < T; ++t) {
        GraphNode n;
        n.kind = NodeKind::Frame;
        n.frame_index = t;
        n.feature = frame_features.row(t).transpose();
        g.nodes.push_back(std::move(n));
    }

    // Object nodes, frame-major.
    int object_counter = 0;
    for (int t = 0; t < T; ++t) {
        const FrameData& f = ep.frames[static_cast<std::size_t>(t)];
        for (const Region& r : f.regions) {
            GraphNode n;
            n.kind = NodeKind::Object;
            n.frame_index = t;
            n.object_index = object_counter++;
            n.region_name = r.name;
            n.feature =
                object_embedding(f.patch_embeddings, f.attention, r.patches);
            g.nodes.push_back(std::move(n));
        }
    }

    int text_index = -1;
    if (cfg.with_text) {
        if (w_t.cols() != ep.text_embedding.size())
            throw ShapeError("build_graph: text projection expects " +
                             std::to_string(w_t.cols()) + " dims, episode has " +
                             std::to_string(ep.text_embedding.size()));
        GraphNode n;
        n.kind = NodeKind::Text;
        n.feature = w_t * ep.text_embedding;
        text_index = static_cast<int>(g.nodes.size());
        g.nodes.push_back(std::move(n));
    }

    // Temporal chain: consecutive frames, always present.
    for (int t = 0; t + 1 < T; ++t) {
        GraphEdge e;
        e.kind = EdgeKind::Temporal;
        e.i = t;
        e.j = t + 1;
        e.weight = initial_edge_weight(g.nodes[t].feature,
                                       g.nodes[t + 1].feature);
        g.edges.push_back(e);
    }

    // Spatial: containment plus thresholded object pairs, per frame.
    std::vector<std::vector<int>> objects_of_frame(
        static_cast<std::size_t>(T));
    for (std::size_t idx = 0; idx < g.nodes.size(); ++idx)
        if (g.nodes[idx].kind == NodeKind::Object)
            objects_of_frame[static_cast<std::size_t>(
                                 g.nodes[idx].frame_index)]
                .push_back(static_cast<int>(idx));
    for (int t = 0; t < T; ++t) {
        const auto& objs = objects_of_frame[static_cast<std::size_t>(t)];
        for (int oi : objs) {
            GraphEdge e;
            e.kind = EdgeKind::Spatial;
            e.i = t;  // the frame node
            e.j = oi;
            e.weight = initial_edge_weight(g.nodes[t].feature,
                                           g.nodes[oi].feature);
            g.edges.push_back(e);
        }
        for (std::size_t a = 0; a < objs.size(); ++a)
            for (std::size_t b = a + 1; b < objs.size(); ++b) {
                const double c = initial_edge_weight(
                    g.nodes[objs[a]].feature, g.nodes[objs[b]].feature);
                if (c >= cfg.spatial_threshold) {
                    GraphEdge e;
                    e.kind = EdgeKind::Spatial;
                    e.i = objs[a];
                    e.j = objs[b];
                    e.weight = c;
                    g.edges.push_back(e);
                }
            }
    }

    // Semantic: text to visual nodes, similarity taken in the shared
    // projection space.  Text--Frame edges are the connectivity floor and
    // exist unconditionally; Text--Object edges are thresholded.
    if (cfg.with_text) {
        const Vector tproj = g.nodes[static_cast<std::size_t>(text_index)]
                                 .feature;  // already W_t f_t
        for (std::size_t idx = 0; idx < g.nodes.size(); ++idx) {
            const GraphNode& n = g.nodes[idx];
            if (n.kind != NodeKind::Frame && n.kind != NodeKind::Object)
                continue;
            if (w_v.cols() != n.feature.size())
                throw ShapeError(
                    "build_graph: visual projection expects " +
                    std::to_string(w_v.cols()) + " dims, feature has " +
                    std::to_string(n.feature.size()));
            const double c = safe_cos(w_v * n.feature, tproj);
            const bool mandatory = n.kind == NodeKind::Frame;
            if (mandatory || c >= cfg.semantic_threshold) {
                GraphEdge e;
                e.kind = EdgeKind::Semantic;
                e.i = static_cast<int>(idx);
                e.j = text_index;
                e.weight = c;
                g.edges.push_back(e);
            }
        }
    }

    g.refresh_adjacency();
    return g;
}

void adapt_topology(MultimodalGraph& g, double prune_threshold,
                    double add_threshold) {
    if (prune_threshold >= add_threshold)
        throw ConfigError("adapt_topology: prune threshold must be below "
                          "add threshold");

    // Prune: weak edges go inactive, fixed skeleton stays.
    for (GraphEdge& e : g.edges) {
        if (!e.active || e.weight >= prune_threshold) continue;
        if (e.kind == EdgeKind::Temporal) continue;
        if (is_containment(g, e)) continue;
        if (is_text_frame(g, e)) continue;
        e.active = false;
    }

    // Add: high-similarity candidate pairs become (or reactivate) edges.
    const auto n = static_cast<int>(g.nodes.size());
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const GraphNode& a = g.nodes[static_cast<std::size_t>(i)];
            const GraphNode& b = g.nodes[static_cast<std::size_t>(j)];
            EdgeKind kind;
            if (a.kind == NodeKind::Object && b.kind == NodeKind::Object &&
                a.frame_index == b.frame_index) {
                kind = EdgeKind::Spatial;
            } else if ((a.kind == NodeKind::Text &&
                        b.kind == NodeKind::Object) ||
                       (a.kind == NodeKind::Object &&
                        b.kind == NodeKind::Text)) {
                kind = EdgeKind::Semantic;
            } else {
                continue;
            }
            const double c = safe_cos(a.feature, b.feature);
            if (c < add_threshold) continue;
            const int existing = g.find_edge(i, j);
            if (existing >= 0) {
                GraphEdge& e = g.edges[static_cast<std::size_t>(existing)];
                e.active = true;
                e.weight = c;
            } else {
                GraphEdge e;
                e.kind = kind;
                e.i = i;
                e.j = j;
                e.weight = c;
                g.edges.push_back(e);
            }
        }
    }

    // Re-enforce the floor in case an imported or hand-built graph arrived
    // with parts of the skeleton deactivated.
    for (GraphEdge& e : g.edges) {
        if (e.active) continue;
        if (e.kind == EdgeKind::Temporal || is_containment(g, e) ||
            is_text_frame(g, e))
            e.active = true;
    }

    g.refresh_adjacency();
}

// ---- export / import -----------------------------------------------------

namespace {

int kind_rank(NodeKind k) {
    switch (k) {
        case NodeKind::Frame: return 0;
        case NodeKind::Object: return 1;
        case NodeKind::Text: return 2;
    }
    return 3;
}

std::string dot_id(const MultimodalGraph& g, int idx) {
    const GraphNode& n = g.nodes[static_cast<std::size_t>(idx)];
    switch (n.kind) {
        case NodeKind::Frame: return "f" + std::to_string(n.frame_index);
        case NodeKind::Object: return "o" + std::to_string(n.object_index);
        case NodeKind::Text: return "txt";
    }
    return "n" + std::to_string(idx);
}

} // namespace

std::string export_dot(const MultimodalGraph& g) {
    // Stable ordering: nodes by (kind, storage index), edges by
    // (kind, endpoints).
    std::vector<int> node_order(g.nodes.size());
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        node_order[i] = static_cast<int>(i);
    std::stable_sort(node_order.begin(), node_order.end(), [&](int a, int b) {
        return kind_rank(g.nodes[static_cast<std::size_t>(a)].kind) <
               kind_rank(g.nodes[static_cast<std::size_t>(b)].kind);
    });
    std::vector<int> edge_order(g.edges.size());
    for (std::size_t i = 0; i < g.edges.size(); ++i)
        edge_order[i] = static_cast<int>(i);
    std::stable_sort(edge_order.begin(), edge_order.end(), [&](int a, int b) {
        const GraphEdge& ea = g.edges[static_cast<std::size_t>(a)];
        const GraphEdge& eb = g.edges[static_cast<std::size_t>(b)];
        if (ea.kind != eb.kind) return ea.kind < eb.kind;
        if (ea.i != eb.i) return ea.i < eb.i;
        return ea.j < eb.j;
    });

    std::ostringstream os;
    os << "digraph multimodal {\n";
    os << "  graph [rankdir=LR];\n";
    os << "  edge [dir=none];\n";
    for (int idx : node_order) {
        const GraphNode& n = g.nodes[static_cast<std::size_t>(idx)];
        os << "  " << dot_id(g, idx) << " [label=\"";
        switch (n.kind) {
            case NodeKind::Frame:
                os << "frame " << n.frame_index << "\" shape=box";
                break;
            case NodeKind::Object:
                os << n.region_name << " (t=" << n.frame_index
                   << ")\" shape=ellipse";
                break;
            case NodeKind::Text:
                os << "text\" shape=diamond style=filled fillcolor=lightblue";
                break;
        }
        os << "];\n";
    }
    for (int idx : edge_order) {
        const GraphEdge& e = g.edges[static_cast<std::size_t>(idx)];
        // Semantic edges are rendered pointing into the text node, the
        // direction information flows at readout; everything else is
        // drawn undirected.
        int from = e.i, to = e.j;
        const bool into_text =
            e.kind == EdgeKind::Semantic &&
            g.nodes[static_cast<std::size_t>(e.i)].kind == NodeKind::Text;
        if (into_text) std::swap(from, to);
        os << "  " << dot_id(g, from) << " -> " << dot_id(g, to) << " [";
        switch (e.kind) {
            case EdgeKind::Temporal: os << "style=bold color=black"; break;
            case EdgeKind::Spatial: os << "style=solid color=gray30"; break;
            case EdgeKind::Semantic:
                os << "style=dashed color=blue dir=forward";
                break;
        }
        if (!e.active) os << " style=dotted color=gray70";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", e.weight);
        os << " label=\"" << buf << "\"];\n";
    }
    os << "}\n";
    return os.str();
}

std::string export_structured(const MultimodalGraph& g) {
    json j;
    json nodes = json::array();
    for (const GraphNode& n : g.nodes) {
        json jn;
        jn["kind"] = to_string(n.kind);
        jn["frame_index"] = n.frame_index;
        jn["object_index"] = n.object_index;
        jn["region"] = n.region_name;
        jn["feature"] = std::vector<double>(
            n.feature.data(), n.feature.data() + n.feature.size());
        nodes.push_back(std::move(jn));
    }
    json edges = json::array();
    for (const GraphEdge& e : g.edges) {
        edges.push_back({{"kind", to_string(e.kind)},
                         {"i", e.i},
                         {"j", e.j},
                         {"weight", e.weight},
                         {"active", e.active}});
    }
    j["nodes"] = std::move(nodes);
    j["edges"] = std::move(edges);
    return j.dump(2) + "\n";
}

MultimodalGraph import_graph(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("import_graph: ") + e.what());
    }
    MultimodalGraph g;
    try {
        for (const json& jn : j.at("nodes")) {
            GraphNode n;
            const std::string kind = jn.at("kind").get<std::string>();
            if (kind == "frame") n.kind = NodeKind::Frame;
            else if (kind == "object") n.kind = NodeKind::Object;
            else if (kind == "text") n.kind = NodeKind::Text;
            else throw FormatError("import_graph: unknown node kind '" +
                                   kind + "'");
            n.frame_index = jn.at("frame_index").get<int>();
            n.object_index = jn.at("object_index").get<int>();
            n.region_name = jn.at("region").get<std::string>();
            const auto feat = jn.at("feature").get<std::vector<double>>();
            n.feature = Eigen::Map<const Vector>(
                feat.data(), static_cast<Eigen::Index>(feat.size()));
            g.nodes.push_back(std::move(n));
        }
        for (const json& je : j.at("edges")) {
            GraphEdge e;
            const std::string kind = je.at("kind").get<std::string>();
            if (kind == "temporal") e.kind = EdgeKind::Temporal;
            else if (kind == "spatial") e.kind = EdgeKind::Spatial;
            else if (kind == "semantic") e.kind = EdgeKind::Semantic;
            else throw FormatError("import_graph: unknown edge kind '" +
                                   kind + "'");
            e.i = je.at("i").get<int>();
            e.j = je.at("j").get<int>();
            e.weight = je.at("weight").get<double>();
            e.active = je.at("active").get<bool>();
            const auto n = static_cast<int>(g.nodes.size());
            if (e.i < 0 || e.i >= n || e.j < 0 || e.j >= n)
                throw IndexError("import_graph: edge endpoint out of range");
            g.edges.push_back(e);
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("import_graph: ") + e.what());
    }
    g.refresh_adjacency();
    return g;
}

} // namespace mmg
