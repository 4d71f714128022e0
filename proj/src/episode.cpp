#include "mmg/episode.hpp"

#include "mmg/errors.hpp"
#include "mmg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mmg {

namespace {

// Everything the generator emits passes through 32-bit precision once, so
// the f32 on-disk format reproduces in-memory values exactly.
double q32(double x) { return static_cast<double>(static_cast<float>(x)); }

// Salts separating the generator's independent random streams.
constexpr std::uint64_t kGroupSalt = 0x6d6f7469;  // motion planes
constexpr std::uint64_t kTextSalt = 0x74657874;   // text prototypes
constexpr std::uint64_t kEpSalt = 0x65700000;     // per-episode stream

// Feature scales.  Chosen large relative to noise_std's default so the
// desk-scale model separates classes within a few hundred optimizer
// steps; the class structure itself does not depend on them.
constexpr double kSignalAmp = 2.0;
constexpr double kDistractorAmp = 1.2;
constexpr double kTextAmp = 4.0;
constexpr int kRegionLen = 3;

Vector random_unit(Rng& rng, int d) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = rng.normal();
    const double n = v.norm();
    if (n < 1e-9) return random_unit(rng, d);  // astronomically unlikely
    return v / n;
}

// Orthonormal pair spanning one motion plane.
std::pair<Vector, Vector> random_plane(Rng& rng, int d) {
    Vector mu = random_unit(rng, d);
    Vector nu = random_unit(rng, d);
    nu -= mu * mu.dot(nu);
    const double n = nu.norm();
    if (n < 1e-6) return random_plane(rng, d);
    return {mu, nu / n};
}

} // namespace

void validate_config(const SynthConfig& cfg) {
    if (cfg.num_classes < 1 || cfg.episodes_per_class < 1 ||
        cfg.frames < 1 || cfg.patches < 1 || cfg.objects_per_frame < 1)
        throw ConfigError("synth config: all counts must be >= 1");
    if (cfg.d_v < 2 || cfg.d_t < 2)
        throw ConfigError("synth config: embedding dims must be >= 2");
    if (cfg.noise_std < 0.0)
        throw ConfigError("synth config: noise_std must be >= 0");
    if (cfg.patches < kRegionLen)
        throw ConfigError("synth config: need at least " +
                          std::to_string(kRegionLen) + " patches per frame");
}

void validate_episode(const Episode& ep) {
    const auto T = ep.frames.size();
    if (ep.alignment.size() != T)
        throw FormatError("episode: alignment covers " +
                          std::to_string(ep.alignment.size()) + " frames, " +
                          "episode has " + std::to_string(T));
    for (std::size_t t = 0; t < T; ++t) {
        const FrameData& f = ep.frames[t];
        const auto N = f.patch_embeddings.rows();
        if (f.attention.size() != N)
            throw FormatError("episode: frame " + std::to_string(t) + " has " +
                              std::to_string(N) + " patches but " +
                              std::to_string(f.attention.size()) +
                              " attention scores");
        for (Eigen::Index i = 0; i < N; ++i) {
            const double a = f.attention(i);
            if (!std::isfinite(a) || a < 0.0)
                throw FormatError("episode: frame " + std::to_string(t) +
                                  " attention[" + std::to_string(i) +
                                  "] is not finite and non-negative");
        }
        for (const Region& r : f.regions) {
            if (r.patches.empty())
                throw FormatError("episode: empty region '" + r.name + "'");
            bool positive = false;
            for (int idx : r.patches) {
                if (idx < 0 || idx >= N)
                    throw IndexError("episode: region '" + r.name +
                                     "' names patch " + std::to_string(idx) +
                                     " but frame has " + std::to_string(N));
                if (f.attention(idx) > 0.0) positive = true;
            }
            if (!positive)
                throw FormatError("episode: region '" + r.name +
                                  "' has no positive attention");
        }
    }
}

Vector frame_embedding(const Matrix& patch_embeddings) {
    if (patch_embeddings.rows() < 1)
        throw ShapeError("frame_embedding: no patches");
    return patch_embeddings.colwise().mean().transpose();
}

Vector object_embedding(const Matrix& patch_embeddings,
                        const Vector& attention,
                        const std::vector<int>& region) {
    if (region.empty())
        throw Error("object_embedding: empty region");
    if (attention.size() != patch_embeddings.rows())
        throw ShapeError("object_embedding: " +
                         std::to_string(patch_embeddings.rows()) +
                         " patches vs " + std::to_string(attention.size()) +
                         " attention scores");
    double total = 0.0;
    for (int i : region) {
        if (i < 0 || i >= patch_embeddings.rows())
            throw IndexError("object_embedding: patch index " +
                             std::to_string(i) + " out of range");
        total += attention(i);
    }
    if (total <= 0.0)
        throw Error("object_embedding: degenerate region with zero "
                    "attention mass");
    Vector out = Vector::Zero(patch_embeddings.cols());
    for (int i : region)
        out += (attention(i) / total) * patch_embeddings.row(i).transpose();
    return out;
}

std::vector<Region> extract_regions(const Vector& attention, double quantile) {
    if (!(quantile > 0.0 && quantile < 1.0))
        throw ConfigError("extract_regions: quantile must lie in (0, 1)");
    const Eigen::Index n = attention.size();
    if (n == 0) return {};

    // Linear-interpolated order statistic.
    std::vector<double> sorted(attention.data(), attention.data() + n);
    std::sort(sorted.begin(), sorted.end());
    const double h = quantile * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    double cut = sorted[lo];
    if (lo + 1 < sorted.size()) cut += frac * (sorted[lo + 1] - sorted[lo]);

    std::vector<Region> regions;
    std::vector<int> run;
    auto flush = [&] {
        if (!run.empty()) {
            regions.push_back(
                {"region_" + std::to_string(regions.size()), run});
            run.clear();
        }
    };
    for (Eigen::Index i = 0; i < n; ++i) {
        if (attention(i) > cut) {
            if (!run.empty() && run.back() != static_cast<int>(i) - 1) flush();
            run.push_back(static_cast<int>(i));
        } else {
            flush();
        }
    }
    flush();
    return regions;
}

Matrix synth_text_prototypes(const SynthConfig& cfg) {
    validate_config(cfg);
    Matrix protos(cfg.num_classes, cfg.d_t);
    for (int k = 0; k < cfg.num_classes; ++k) {
        Rng rng = Rng::keyed(cfg.seed, kTextSalt, static_cast<std::uint64_t>(k));
        protos.row(k) = random_unit(rng, cfg.d_t).transpose();
    }
    return protos;
}

std::vector<Episode> synth_dataset(const SynthConfig& cfg) {
    validate_config(cfg);

    // One motion plane per class pair: classes 2g and 2g+1 share it and
    // differ only by traversal order.
    const int groups = (cfg.num_classes + 1) / 2;
    std::vector<std::pair<Vector, Vector>> planes;
    planes.reserve(groups);
    for (int g = 0; g < groups; ++g) {
        Rng rng = Rng::keyed(cfg.seed, kGroupSalt, static_cast<std::uint64_t>(g));
        planes.push_back(random_plane(rng, cfg.d_v));
    }
    const Matrix text_protos = synth_text_prototypes(cfg);

    constexpr double kHalfPi = 1.57079632679489661923;
    std::vector<Episode> out;
    out.reserve(static_cast<std::size_t>(cfg.num_classes) *
                cfg.episodes_per_class);

    for (int k = 0; k < cfg.num_classes; ++k) {
        const auto& [mu, nu] = planes[k / 2];
        const bool reversed = (k % 2) == 1;
        for (int e = 0; e < cfg.episodes_per_class; ++e) {
            Rng rng = Rng::keyed(cfg.seed, kEpSalt + static_cast<std::uint64_t>(k),
                                 static_cast<std::uint64_t>(e));
            Episode ep;
            ep.class_id = k;
            ep.annotation = "action_" + std::to_string(k);
            ep.alignment.assign(cfg.frames, 0);

            // Region layout is fixed for the episode: objects are tracked
            // across frames at constant patch positions.  Starts are drawn
            // disjoint so regions never overlap.
            std::vector<int> starts;
            for (int o = 0; o < cfg.objects_per_frame; ++o) {
                int s = 0;
                for (int attempt = 0; attempt < 1000; ++attempt) {
                    s = static_cast<int>(
                        rng.below(cfg.patches - kRegionLen + 1));
                    bool ok = true;
                    for (int prev : starts)
                        if (std::abs(prev - s) < kRegionLen) ok = false;
                    if (ok) break;
                    s = -1;
                }
                if (s < 0) break;  // grid too crowded; fewer objects then
                starts.push_back(s);
            }

            // Distractor directions: per-episode, label-free.
            std::vector<Vector> distractor_dirs;
            for (std::size_t o = 1; o < starts.size(); ++o)
                distractor_dirs.push_back(random_unit(rng, cfg.d_v));

            ep.frames.resize(cfg.frames);
            for (int t = 0; t < cfg.frames; ++t) {
                FrameData& fr = ep.frames[t];
                fr.patch_embeddings.resize(cfg.patches, cfg.d_v);
                fr.attention.resize(cfg.patches);

                // Paired classes run the same arc in opposite order.
                const int t_eff = reversed ? cfg.frames - 1 - t : t;
                const double theta =
                    cfg.frames > 1
                        ? kHalfPi * t_eff / static_cast<double>(cfg.frames - 1)
                        : 0.0;
                const Vector dir =
                    std::cos(theta) * mu + std::sin(theta) * nu;

                for (int i = 0; i < cfg.patches; ++i) {
                    for (int c = 0; c < cfg.d_v; ++c)
                        fr.patch_embeddings(i, c) =
                            q32(cfg.noise_std * rng.normal());
                    fr.attention(i) = q32(0.05 * std::fabs(rng.normal()));
                }
                for (std::size_t o = 0; o < starts.size(); ++o) {
                    const Vector& base =
                        o == 0 ? dir : distractor_dirs[o - 1];
                    const double amp = o == 0 ? kSignalAmp : kDistractorAmp;
                    Region region;
                    region.name = o == 0 ? "object_0"
                                         : "distractor_" + std::to_string(o);
                    for (int p = 0; p < kRegionLen; ++p) {
                        const int idx = starts[o] + p;
                        region.patches.push_back(idx);
                        for (int c = 0; c < cfg.d_v; ++c)
                            fr.patch_embeddings(idx, c) =
                                q32(amp * base(c) +
                                    cfg.noise_std * rng.normal());
                        fr.attention(idx) =
                            q32(1.0 + 0.25 * std::fabs(rng.normal()));
                    }
                    fr.regions.push_back(std::move(region));
                }
            }

            ep.text_embedding.resize(cfg.d_t);
            for (int c = 0; c < cfg.d_t; ++c)
                ep.text_embedding(c) = q32(kTextAmp * text_protos(k, c) +
                                           cfg.noise_std * rng.normal());
            out.push_back(std::move(ep));
        }
    }
    return out;
}

} // namespace mmg
