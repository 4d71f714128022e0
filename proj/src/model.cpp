#include "mmg/model.hpp"

#include "mmg/errors.hpp"
#include "mmg/rng.hpp"

#include <cmath>
#include <limits>
#include <utility>

namespace mmg {

const char* to_string(Variant v) {
    switch (v) {
        case Variant::VisualOnly: return "visual_only";
        case Variant::PlusText: return "plus_text";
        case Variant::StaticGraph: return "static_graph";
        case Variant::Full: return "full";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "visual_only") return Variant::VisualOnly;
    if (s == "plus_text") return Variant::PlusText;
    if (s == "static_graph") return Variant::StaticGraph;
    if (s == "full") return Variant::Full;
    throw ConfigError("unknown variant '" + s +
                      "' (expected visual_only, plus_text, static_graph "
                      "or full)");
}

GraphConfig graph_config(const ModelConfig& cfg) {
    GraphConfig g;
    g.spatial_threshold = cfg.spatial_threshold;
    g.semantic_threshold = cfg.semantic_threshold;
    g.with_text = cfg.variant == Variant::StaticGraph ||
                  cfg.variant == Variant::Full;
    return g;
}

Tensor temporal_aggregate(const TemporalAggParams& p, const Tensor& x) {
    const Eigen::Index d = x.cols();
    if (p.wq.cols() != d || p.wk.cols() != d || p.wv.cols() != d)
        throw ShapeError("temporal_aggregate: projections expect width " +
                         std::to_string(p.wq.cols()) + ", input has " +
                         std::to_string(d));
    Tensor q = matmul(x, transpose(p.wq));
    Tensor k = matmul(x, transpose(p.wk));
    Tensor v = matmul(x, transpose(p.wv));
    Tensor scores =
        scale(matmul(q, transpose(k)),
              Tensor::scalar(1.0 / std::sqrt(static_cast<double>(d))));
    return x + matmul(softmax_rows(scores), v);
}

Tensor fuse(const FusionParams& p, const Tensor& visual, const Tensor& text,
            Tensor* alpha_out) {
    Tensor fv = matmul(p.w_v, visual);
    Tensor ft = matmul(p.w_t, text);
    Tensor alpha = softmax(
        stack_rows({dot(p.a_fusion, fv), dot(p.a_fusion, ft)}));
    if (alpha_out) *alpha_out = alpha;
    return matmul(transpose(stack_rows({fv, ft})), alpha);
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("temporal.wq", temporal.wq);
    out.emplace_back("temporal.wk", temporal.wk);
    out.emplace_back("temporal.wv", temporal.wv);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string prefix = "gat" + std::to_string(l) + ".";
        out.emplace_back(prefix + "w", layers[l].w);
        out.emplace_back(prefix + "a", layers[l].a);
        out.emplace_back(prefix + "omega_temporal", layers[l].omega_temporal);
        out.emplace_back(prefix + "omega_spatial", layers[l].omega_spatial);
        out.emplace_back(prefix + "omega_semantic", layers[l].omega_semantic);
        out.emplace_back(prefix + "m", layers[l].m);
    }
    out.emplace_back("adapt.lambda_temporal", adapt.lambda_temporal);
    out.emplace_back("adapt.lambda_spatial", adapt.lambda_spatial);
    out.emplace_back("adapt.lambda_semantic", adapt.lambda_semantic);
    out.emplace_back("fusion.w_v", fusion.w_v);
    out.emplace_back("fusion.w_t", fusion.w_t);
    out.emplace_back("fusion.a_fusion", fusion.a_fusion);
    out.emplace_back("classifier.w", classifier_w);
    out.emplace_back("classifier.b", classifier_b);
    return out;
}

std::vector<Tensor> ModelParams::tensors() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
}

ModelParams ModelParams::clone() const {
    auto copy = [](const Tensor& t) {
        return t.detached_copy(t.requires_grad());
    };
    ModelParams c;
    c.config = config;
    c.temporal = {copy(temporal.wq), copy(temporal.wk), copy(temporal.wv)};
    for (const GatLayerParams& l : layers)
        c.layers.push_back({copy(l.w), copy(l.a), copy(l.omega_temporal),
                            copy(l.omega_spatial), copy(l.omega_semantic),
                            copy(l.m)});
    c.adapt = {copy(adapt.lambda_temporal), copy(adapt.lambda_spatial),
               copy(adapt.lambda_semantic)};
    c.fusion = {copy(fusion.w_v), copy(fusion.w_t), copy(fusion.a_fusion)};
    c.classifier_w = copy(classifier_w);
    c.classifier_b = copy(classifier_b);
    return c;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.d_v <= 0 || cfg.d_t <= 0 || cfg.num_classes <= 0 ||
        cfg.gat_layers <= 0)
        throw ConfigError("init_params: all dimensions must be positive");
    const int d = cfg.d();
    ModelParams p;
    p.config = cfg;
    p.temporal = {Tensor::zeros(d, d, true), Tensor::zeros(d, d, true),
                  Tensor::zeros(d, d, true)};
    for (int l = 0; l < cfg.gat_layers; ++l)
        p.layers.push_back({Tensor::zeros(d, d, true),
                            Tensor::zeros(2 * d, 1, true),
                            Tensor::zeros(1, 1, true),
                            Tensor::zeros(1, 1, true),
                            Tensor::zeros(1, 1, true),
                            Tensor::zeros(d, d, true)});
    p.adapt = {Tensor::zeros(1, 1, true), Tensor::zeros(1, 1, true),
               Tensor::zeros(1, 1, true)};
    p.fusion = {Tensor::zeros(d, d, true), Tensor::zeros(d, cfg.d_t, true),
                Tensor::zeros(d, 1, true)};
    const Eigen::Index readout =
        cfg.variant == Variant::PlusText ? 2 * d : d;
    p.classifier_w = Tensor::zeros(cfg.num_classes, readout, true);
    p.classifier_b = Tensor::zeros(cfg.num_classes, 1, true);

    // One stream, drawn in declaration order.  Relation weights start at a
    // small positive constant so the modulation terms are live but gentle
    // from step one; the classifier bias starts at zero.
    Rng rng = Rng::keyed(seed, 0x696e6974ULL);
    for (auto& [name, t] : p.named()) {
        if (name.find("omega") != std::string::npos ||
            name.find("lambda") != std::string::npos) {
            t.leaf_value().setConstant(0.1);
            continue;
        }
        if (name == "classifier.b") continue;
        Matrix& v = t.leaf_value();
        const Eigen::Index fan_in = v.cols() == 1 ? v.rows() : v.cols();
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (Eigen::Index r = 0; r < v.rows(); ++r)
            for (Eigen::Index c = 0; c < v.cols(); ++c)
                v(r, c) = rng.uniform(-bound, bound);
    }
    return p;
}

void ensure_graph(const ModelParams& params, EpisodeState& state,
                  const Episode& ep) {
    if (state.built) return;
    const ModelConfig& cfg = params.config;
    if (ep.frames.empty())
        throw Error("ensure_graph: episode has no frames");
    if (ep.frames.front().patch_embeddings.cols() != cfg.d_v)
        throw ShapeError("ensure_graph: model expects visual width " +
                         std::to_string(cfg.d_v) + ", episode provides " +
                         std::to_string(
                             ep.frames.front().patch_embeddings.cols()));
    const auto T = static_cast<Eigen::Index>(ep.frames.size());
    Matrix means(T, cfg.d_v);
    for (Eigen::Index t = 0; t < T; ++t)
        means.row(t) =
            frame_embedding(ep.frames[static_cast<std::size_t>(t)]
                                .patch_embeddings)
                .transpose();
    state.frame_means = std::move(means);
    Matrix agg;
    {
        NoGradGuard ng;
        agg = temporal_aggregate(params.temporal,
                                 Tensor::matrix(state.frame_means))
                  .value();
    }
    state.graph = build_graph(ep, graph_config(cfg), agg,
                              params.fusion.w_v.value(),
                              params.fusion.w_t.value());
    state.built = true;
}

void adapt_state(const ModelParams& params, EpisodeState& state) {
    if (!state.built)
        throw Error("adapt_state: no graph has been built yet");
    adapt_topology(state.graph, params.config.prune_threshold,
                   params.config.add_threshold);
}

namespace {

std::vector<Vector> feature_values(const std::vector<Tensor>& h) {
    std::vector<Vector> out;
    out.reserve(h.size());
    for (const Tensor& t : h) out.push_back(t.value().col(0));
    return out;
}

} // namespace

Tensor forward_logits(const ModelParams& params, EpisodeState& state,
                      const Episode& ep, ForwardTrace* trace) {
    ensure_graph(params, state, ep);
    const ModelConfig& cfg = params.config;
    MultimodalGraph& pg = state.graph;
    const std::size_t n_nodes = pg.nodes.size();
    const int d = cfg.d();
    const bool dynamic = cfg.variant == Variant::Full;
    const bool needs_text = cfg.variant != Variant::VisualOnly;

    if (static_cast<int>(params.layers.size()) != cfg.gat_layers)
        throw ConfigError("forward_logits: layer count mismatch");

    // Entry features: aggregated frame rows, raw object aggregates, and
    // the projected text embedding.
    Tensor agg = temporal_aggregate(params.temporal,
                                    Tensor::matrix(state.frame_means));
    Tensor text_raw, text_proj;
    if (needs_text) {
        text_raw = Tensor::vector(ep.text_embedding);
        text_proj = matmul(params.fusion.w_t, text_raw);
    }
    std::vector<Tensor> h;
    h.reserve(n_nodes);
    for (const GraphNode& nd : pg.nodes) {
        switch (nd.kind) {
            case NodeKind::Frame:
                h.push_back(row(agg, nd.frame_index));
                break;
            case NodeKind::Object:
                h.push_back(Tensor::vector(nd.feature));
                break;
            case NodeKind::Text:
                if (!text_proj.valid())
                    throw Error("forward_logits: graph carries a text node "
                                "but the variant has no text input");
                h.push_back(text_proj);
                break;
        }
    }

    if (trace) {
        trace->attention.clear();
        trace->features.clear();
        trace->refined.clear();
        trace->features.push_back(feature_values(h));
    }
    std::vector<Vector> entry_values;
    if (dynamic) entry_values = feature_values(h);

    constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> latest_weight(pg.edges.size(), kNaN);

    for (int layer = 0; layer < cfg.gat_layers; ++layer) {
        const GatLayerParams& lp = params.layers[static_cast<std::size_t>(layer)];

        // Refinement: similarity plus learned per-relation bonus, from the
        // features entering this layer.  The semantic bonus reuses the
        // final layer's bilinear form.
        std::vector<Tensor> refined(pg.edges.size());
        if (dynamic) {
            const Tensor& last_m = params.layers.back().m;
            for (std::size_t e = 0; e < pg.edges.size(); ++e) {
                const GraphEdge& ed = pg.edges[e];
                if (!ed.active) continue;
                Tensor base = cosine_sim(h[static_cast<std::size_t>(ed.i)],
                                         h[static_cast<std::size_t>(ed.j)],
                                         ZeroNormPolicy::ReturnZero);
                Tensor bonus;
                switch (ed.kind) {
                    case EdgeKind::Temporal:
                        bonus = params.adapt.lambda_temporal;
                        break;
                    case EdgeKind::Spatial:
                        bonus = params.adapt.lambda_spatial * base;
                        break;
                    case EdgeKind::Semantic:
                        bonus = params.adapt.lambda_semantic *
                                sigmoid(dot(
                                    h[static_cast<std::size_t>(ed.i)],
                                    matmul(last_m,
                                           h[static_cast<std::size_t>(
                                               ed.j)])));
                        break;
                }
                refined[e] = base + bonus;
                latest_weight[e] = refined[e].item();
            }
        }
        if (trace) {
            std::vector<double> snap(pg.edges.size(), kNaN);
            if (dynamic)
                for (std::size_t e = 0; e < pg.edges.size(); ++e)
                    if (refined[e].valid()) snap[e] = refined[e].item();
            trace->refined.push_back(std::move(snap));
        }

        // Shared projections and the two halves of the attention vector.
        Tensor a_src = slice(lp.a, 0, d);
        Tensor a_dst = slice(lp.a, d, d);
        std::vector<Tensor> wh(n_nodes), mh(n_nodes);
        std::vector<Tensor> s_src(n_nodes), s_dst(n_nodes);
        for (std::size_t i = 0; i < n_nodes; ++i) {
            wh[i] = matmul(lp.w, h[i]);
            s_src[i] = dot(a_src, wh[i]);
            s_dst[i] = dot(a_dst, wh[i]);
        }

        // Spatial modulation is symmetric, so both directions of an edge
        // share one node of the tape.
        std::vector<Tensor> spatial_phi(pg.edges.size());
        for (std::size_t e = 0; e < pg.edges.size(); ++e) {
            const GraphEdge& ed = pg.edges[e];
            if (ed.active && ed.kind == EdgeKind::Spatial)
                spatial_phi[e] =
                    lp.omega_spatial *
                    cosine_sim(h[static_cast<std::size_t>(ed.i)],
                               h[static_cast<std::size_t>(ed.j)],
                               ZeroNormPolicy::ReturnZero);
        }

        std::vector<Tensor> next(n_nodes);
        std::vector<Vector> layer_attention(trace ? n_nodes : 0);
        for (std::size_t i = 0; i < n_nodes; ++i) {
            const auto& nbrs = pg.adjacency[i];
            if (nbrs.empty())
                throw IsolatedNodeError(
                    "node " + std::to_string(i) + " (" +
                    to_string(pg.nodes[i].kind) +
                    ") has no active neighbours");
            std::vector<Tensor> logits_list, msgs;
            logits_list.reserve(nbrs.size());
            msgs.reserve(nbrs.size());
            for (const auto& [e, j] : nbrs) {
                const auto eu = static_cast<std::size_t>(e);
                const auto ju = static_cast<std::size_t>(j);
                Tensor phi;
                switch (pg.edges[eu].kind) {
                    case EdgeKind::Temporal:
                        phi = lp.omega_temporal;
                        break;
                    case EdgeKind::Spatial:
                        phi = spatial_phi[eu];
                        break;
                    case EdgeKind::Semantic:
                        if (!mh[ju].valid()) mh[ju] = matmul(lp.m, h[ju]);
                        phi = lp.omega_semantic *
                              sigmoid(dot(h[i], mh[ju]));
                        break;
                }
                logits_list.push_back(
                    leaky_relu(s_src[i] + s_dst[ju], cfg.leaky_slope) + phi);
                Tensor msg = wh[ju];
                if (cfg.message_scaling && refined[eu].valid())
                    msg = refined[eu] * msg;
                msgs.push_back(std::move(msg));
            }
            Tensor alpha = softmax(stack_rows(logits_list));
            if (trace) layer_attention[i] = alpha.value().col(0);
            next[i] = relu(matmul(transpose(stack_rows(msgs)), alpha));
        }
        h = std::move(next);
        if (trace) {
            trace->attention.push_back(std::move(layer_attention));
            trace->features.push_back(feature_values(h));
        }
    }

    // Leave the refinement products on the cached graph: the next
    // adaptation pass prunes and adds against exactly these weights and
    // entry features.
    if (dynamic) {
        for (std::size_t e = 0; e < pg.edges.size(); ++e)
            if (!std::isnan(latest_weight[e]))
                pg.edges[e].weight = latest_weight[e];
        for (std::size_t i = 0; i < n_nodes; ++i)
            pg.nodes[i].feature = entry_values[i];
    }

    Tensor pooled = mean_rows(stack_rows(h));
    Tensor readout;
    switch (cfg.variant) {
        case Variant::VisualOnly:
            readout = pooled;
            break;
        case Variant::PlusText:
            readout = concat(pooled, text_proj);
            break;
        case Variant::StaticGraph:
        case Variant::Full:
            readout = fuse(params.fusion, pooled, text_raw);
            break;
    }
    return matmul(params.classifier_w, readout) + params.classifier_b;
}

} // namespace mmg
