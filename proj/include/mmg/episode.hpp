#pragma once

#include "mmg/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mmg {

// A named set of patch indices marking one salient region of a frame.
struct Region {
    std::string name;
    std::vector<int> patches;
};

struct FrameData {
    Matrix patch_embeddings;   // N x d_V
    Vector attention;          // N, finite and >= 0
    std::vector<Region> regions;
};

// One synchronized multimodal sample.  Patch embeddings and attention
// maps stand in for a frozen vision backbone; text_embedding stands in
// for a frozen language model's sentence vector.
struct Episode {
    std::vector<FrameData> frames;   // T entries
    Vector text_embedding;           // d_T
    std::string annotation;          // label text
    int class_id = -1;
    std::vector<int> alignment;      // frame index -> annotation index, size T
};

// Throws if invariants are broken: region patch indices within [0, N),
// attention finite/non-negative with positive mass on every region,
// alignment covering each frame exactly once.
void validate_episode(const Episode& ep);

// Mean over all patches of one frame (every patch treated as visible).
Vector frame_embedding(const Matrix& patch_embeddings);

// Attention-weighted aggregate over a region's patches; the weights are
// the region's attention scores normalized to sum 1.  Throws on an empty
// region or all-zero attention inside it.
Vector object_embedding(const Matrix& patch_embeddings,
                        const Vector& attention,
                        const std::vector<int>& region);

// Fallback region proposal for episodes that ship without ground-truth
// regions: patches with attention strictly above the q-quantile (linear
// interpolation between order statistics), grouped into maximal runs of
// consecutive indices.  May return an empty list (e.g. flat attention).
std::vector<Region> extract_regions(const Vector& attention, double quantile);

struct SynthConfig {
    int num_classes = 4;
    int episodes_per_class = 50;
    int frames = 6;             // T
    int patches = 16;           // N
    int objects_per_frame = 2;  // one tracked object + distractors
    int d_v = 32;
    int d_t = 32;
    double noise_std = 0.1;
    std::uint64_t seed = 7;
};

void validate_config(const SynthConfig& cfg);

// Class-k text prototype directions (K x d_T, unit rows), the anchors the
// generator scatters text embeddings around.  Exposed so tests and
// baselines can run nearest-prototype classification.
Matrix synth_text_prototypes(const SynthConfig& cfg);

// Deterministic synthetic dataset, ordered class-major.
//
// Generative story: classes come in pairs sharing one "motion group".  A
// group owns an orthonormal plane (mu, nu) in visual space; the tracked
// object's direction rotates through that plane over the T frames, and
// the two classes of a pair traverse the same arc in opposite orders.
// Since the rest of the episode is class-symmetric, video alone cannot
// tell a pair apart — any order-insensitive visual model tops out at 50%
// on K=4 — while each class keeps its own text prototype, so text
// restores full separability.  Distractor objects follow a random
// per-episode direction and carry no label information.
//
// All generated floats are quantized through 32-bit precision so that a
// round trip through the on-disk format is bit-exact.
std::vector<Episode> synth_dataset(const SynthConfig& cfg);

} // namespace mmg
