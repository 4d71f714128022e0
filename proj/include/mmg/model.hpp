#pragma once

#include "mmg/episode.hpp"
#include "mmg/graph.hpp"
#include "mmg/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mmg {

// Ablation ladder.  Each step keeps everything below it:
//   visual_only   frames + objects, static topology, no text anywhere
//   plus_text     same graph; projected text is concatenated at readout
//   static_graph  text node + attention fusion readout, topology frozen
//   full          adds per-layer edge refinement and topology adaptation
enum class Variant { VisualOnly, PlusText, StaticGraph, Full };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);  // ConfigError on unknown

struct ModelConfig {
    int d_v = 32;  // visual embedding width; also the working width of
                   // every node feature and GAT layer
    int d_t = 32;  // text embedding width (projected down to d_v on entry)
    int num_classes = 4;
    int gat_layers = 2;
    double leaky_slope = 0.2;
    double spatial_threshold = 0.3;
    double semantic_threshold = 0.3;
    double prune_threshold = 0.1;
    double add_threshold = 0.8;
    // When set, messages are multiplied by the refined edge weights instead
    // of the weights acting on topology only.  Off in normal training; the
    // gradient checker switches it on so the refinement parameters sit on
    // the loss path.
    bool message_scaling = false;
    Variant variant = Variant::Full;

    int d() const { return d_v; }
};

GraphConfig graph_config(const ModelConfig& cfg);

// Self-attention over the frame sequence, applied before graph
// construction.  Deliberately has no positional signal: the model can mix
// context across frames but cannot learn "position t" detectors, so frame
// ordering information only enters through the temporal edges.
struct TemporalAggParams {
    Tensor wq, wk, wv;  // each d x d
};

// out = x + softmax_rows((x Wq^T)(x Wk^T)^T / sqrt(d)) (x Wv^T),  x: T x d
Tensor temporal_aggregate(const TemporalAggParams& p, const Tensor& x);

struct GatLayerParams {
    Tensor w;               // d x d shared node transform
    Tensor a;               // 2d x 1 attention vector, split src/dst
    Tensor omega_temporal;  // 1 x 1 per-relation attention bias weights
    Tensor omega_spatial;
    Tensor omega_semantic;
    Tensor m;               // d x d bilinear form for cross-modal affinity
};

// Edge refinement weights; the semantic term reuses the last GAT layer's
// bilinear form rather than owning another d x d matrix.
struct AdaptParams {
    Tensor lambda_temporal;  // 1 x 1 each
    Tensor lambda_spatial;
    Tensor lambda_semantic;
};

struct FusionParams {
    Tensor w_v;       // d x d   visual projection
    Tensor w_t;       // d x d_t text projection
    Tensor a_fusion;  // d x 1   shared scoring vector
};

// alpha = softmax(a^T W_v f_v, a^T W_t f_t); result = alpha_v W_v f_v +
// alpha_t W_t f_t.  If alpha_out is given it receives the 2 x 1 weights.
Tensor fuse(const FusionParams& p, const Tensor& visual, const Tensor& text,
            Tensor* alpha_out = nullptr);

struct ModelParams {
    ModelConfig config;
    TemporalAggParams temporal;
    std::vector<GatLayerParams> layers;
    AdaptParams adapt;
    FusionParams fusion;
    Tensor classifier_w;  // K x d, except K x 2d for the concat readout
    Tensor classifier_b;  // K x 1

    // Stable name -> tensor listing.  Order defines both the
    // initialization draw order and the checkpoint layout.
    std::vector<std::pair<std::string, Tensor>> named() const;
    std::vector<Tensor> tensors() const;
    ModelParams clone() const;  // deep copy of current values
};

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Per-episode cache: the topology is built once and then evolves (for the
// adaptive variant) across epochs, while features are recomputed from the
// parameters on every forward pass.
struct EpisodeState {
    MultimodalGraph graph;
    Matrix frame_means;  // T x d_v, mean patch embedding per frame
    bool built = false;
};

void ensure_graph(const ModelParams& params, EpisodeState& state,
                  const Episode& ep);

// Prune-and-add pass over the cached topology using the weights and entry
// features left behind by the most recent forward pass.
void adapt_state(const ModelParams& params, EpisodeState& state);

// Optional inspection record filled during a forward pass.
struct ForwardTrace {
    // attention[l][i]: weights over node i's active neighbours at layer l,
    // in adjacency order.
    std::vector<std::vector<Vector>> attention;
    // features[0] holds the entry node features, features[l+1] the output
    // of layer l.
    std::vector<std::vector<Vector>> features;
    // refined[l][e]: refined weight of edge e at layer l; NaN where the
    // edge was inactive or refinement did not run.
    std::vector<std::vector<double>> refined;
};

// Runs the whole pipeline for one episode and returns K x 1 class logits.
// Builds the graph on first use; for the adaptive variant also writes the
// latest refined weights and entry features back into the cached graph so
// the next adapt_state call sees them.
Tensor forward_logits(const ModelParams& params, EpisodeState& state,
                      const Episode& ep, ForwardTrace* trace = nullptr);

} // namespace mmg
