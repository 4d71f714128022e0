// Embedding-provider contracts: pooled and region aggregates against
// naive-summation references, region proposal from attention quantiles,
// the synthetic generator's separability and determinism, and bit-exact
// file round trips.

#include "mmg/episode.hpp"
#include "mmg/episode_io.hpp"
#include "mmg/errors.hpp"
#include "mmg/rng.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

using namespace mmg;
namespace fs = std::filesystem;

namespace {

Matrix random_patches(Rng& rng, int n, int d) {
    Matrix m(n, d);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) m(r, c) = rng.normal();
    return m;
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() /
                       ("mmg_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return {std::istreambuf_iterator<char>(is),
            std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("frame embedding is the patch mean") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix patches = random_patches(rng, 5, 4);
        const Vector got = frame_embedding(patches);
        CHECK((got - oracle::frame_mean(patches)).cwiseAbs().maxCoeff() <
              1e-12);
    }
    CHECK_THROWS_AS(frame_embedding(Matrix(0, 4)), ShapeError);
}

TEST_CASE("object embedding, attention-weighted") {
    Rng rng(4);
    SUBCASE("a one-patch region returns that patch exactly") {
        const Matrix patches = random_patches(rng, 6, 5);
        const Vector att = Vector::Ones(6);
        const Vector got = object_embedding(patches, att, {3});
        CHECK(got == patches.row(3).transpose());
    }
    SUBCASE("attention [3, 1] mixes patches 3:1") {
        const Matrix patches = random_patches(rng, 2, 4);
        Vector att(2);
        att << 3, 1;
        const Vector got = object_embedding(patches, att, {0, 1});
        const Vector expect = 0.75 * patches.row(0).transpose() +
                              0.25 * patches.row(1).transpose();
        CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("random regions match the enumeration reference") {
        for (int trial = 0; trial < 50; ++trial) {
            const Matrix patches = random_patches(rng, 8, 6);
            Vector att(8);
            for (int i = 0; i < 8; ++i) att(i) = rng.uniform(0.01, 2.0);
            std::vector<int> region;
            for (int i = 0; i < 8; ++i)
                if (rng.uniform() < 0.5) region.push_back(i);
            if (region.empty()) region.push_back(0);
            const Vector got = object_embedding(patches, att, region);
            const Vector expect =
                oracle::region_aggregate(patches, att, region);
            CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    SUBCASE("normalized weights sum to one") {
        // Aggregating an all-ones patch matrix yields the weight total in
        // every coordinate.
        for (int trial = 0; trial < 50; ++trial) {
            Vector att(7);
            for (int i = 0; i < 7; ++i) att(i) = rng.uniform(0.01, 5.0);
            const Vector got =
                object_embedding(Matrix::Ones(7, 3), att, {1, 2, 5});
            for (int c = 0; c < 3; ++c) CHECK(std::abs(got(c) - 1.0) < 1e-12);
        }
    }
    SUBCASE("degenerate regions are rejected") {
        const Matrix patches = random_patches(rng, 4, 3);
        CHECK_THROWS_AS(object_embedding(patches, Vector::Ones(4), {}),
                        Error);
        CHECK_THROWS_AS(object_embedding(patches, Vector::Ones(4), {4}),
                        IndexError);
        CHECK_THROWS_AS(object_embedding(patches, Vector::Zero(4), {1, 2}),
                        Error);
    }
}

TEST_CASE("region proposal from attention") {
    SUBCASE("one run above the median") {
        Vector att(5);
        att << 0, 0, 9, 9, 0;
        const auto regions = extract_regions(att, 0.5);
        REQUIRE(regions.size() == 1);
        CHECK(regions[0].patches == std::vector<int>{2, 3});
    }
    SUBCASE("two separated peaks give two regions") {
        Vector att(5);
        att << 9, 0, 0, 0, 9;
        const auto regions = extract_regions(att, 0.5);
        REQUIRE(regions.size() == 2);
        CHECK(regions[0].patches == std::vector<int>{0});
        CHECK(regions[1].patches == std::vector<int>{4});
    }
    SUBCASE("flat attention proposes nothing") {
        CHECK(extract_regions(Vector::Ones(6) * 2.5, 0.5).empty());
    }
    SUBCASE("quantile bounds") {
        CHECK_THROWS_AS(extract_regions(Vector::Ones(3), 0.0), ConfigError);
        CHECK_THROWS_AS(extract_regions(Vector::Ones(3), 1.0), ConfigError);
    }
}

TEST_CASE("episode validation") {
    Episode ep = oracle::test_episode(2, 6, 2, 4, 4, 9);
    CHECK_NOTHROW(validate_episode(ep));

    SUBCASE("alignment must cover every frame") {
        ep.alignment.pop_back();
        CHECK_THROWS_AS(validate_episode(ep), FormatError);
    }
    SUBCASE("attention must be finite and non-negative") {
        ep.frames[0].attention(1) = -0.5;
        CHECK_THROWS_AS(validate_episode(ep), FormatError);
    }
    SUBCASE("regions must stay inside the frame") {
        ep.frames[1].regions[0].patches.push_back(6);
        CHECK_THROWS_AS(validate_episode(ep), IndexError);
    }
    SUBCASE("regions need positive attention mass") {
        ep.frames[0].attention(0) = 0.0;
        ep.frames[0].attention(1) = 0.0;
        CHECK_THROWS_AS(validate_episode(ep), FormatError);
    }
}

TEST_CASE("synthetic generator") {
    SynthConfig cfg;
    cfg.episodes_per_class = 10;

    SUBCASE("shape and ordering") {
        const auto data = synth_dataset(cfg);
        REQUIRE(data.size() == 40);
        for (std::size_t i = 0; i < data.size(); ++i) {
            CHECK(data[i].class_id == static_cast<int>(i) / 10);
            CHECK(data[i].frames.size() == 6);
            CHECK(data[i].text_embedding.size() == 32);
            CHECK_NOTHROW(validate_episode(data[i]));
        }
    }
    SUBCASE("same seed, same bits") {
        const auto a = synth_dataset(cfg);
        const auto b = synth_dataset(cfg);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].text_embedding == b[i].text_embedding);
            for (std::size_t t = 0; t < a[i].frames.size(); ++t) {
                CHECK(a[i].frames[t].patch_embeddings ==
                      b[i].frames[t].patch_embeddings);
                CHECK(a[i].frames[t].attention == b[i].frames[t].attention);
            }
        }
        SynthConfig other = cfg;
        other.seed = 8;
        CHECK(synth_dataset(other)[0].text_embedding != a[0].text_embedding);
    }
    SUBCASE("all values survive float32 quantization") {
        const auto data = synth_dataset(cfg);
        int checked = 0;
        for (const auto& ep : data)
            for (const auto& f : ep.frames)
                for (int p = 0; p < f.patch_embeddings.rows(); ++p)
                    for (int c = 0; c < f.patch_embeddings.cols(); ++c) {
                        const double v = f.patch_embeddings(p, c);
                        CHECK(static_cast<double>(static_cast<float>(v)) == v);
                        ++checked;
                    }
        CHECK(checked > 0);
    }
    SUBCASE("text prototypes are unit rows and nearly separate classes") {
        SynthConfig full;  // K=4, 50 episodes/class, noise 0.1
        const Matrix protos = synth_text_prototypes(full);
        REQUIRE(protos.rows() == 4);
        for (int k = 0; k < 4; ++k)
            CHECK(std::abs(protos.row(k).norm() - 1.0) < 1e-6);

        const auto data = synth_dataset(full);
        int hits = 0;
        for (const auto& ep : data) {
            int best = -1;
            double best_score = -1e18;
            for (int k = 0; k < 4; ++k) {
                const double score = (protos.row(k) * ep.text_embedding)(0);
                if (score > best_score) {
                    best_score = score;
                    best = k;
                }
            }
            hits += best == ep.class_id;
        }
        // Nearest-prototype classification on the text channel alone.
        CHECK(static_cast<double>(hits) / static_cast<double>(data.size()) >=
              0.99);
    }
    SUBCASE("configuration bounds") {
        SynthConfig bad = cfg;
        bad.num_classes = 0;
        CHECK_THROWS_AS(synth_dataset(bad), ConfigError);
        bad = cfg;
        bad.patches = 2;
        CHECK_THROWS_AS(synth_dataset(bad), ConfigError);
        bad = cfg;
        bad.noise_std = -0.1;
        CHECK_THROWS_AS(synth_dataset(bad), ConfigError);
        bad = cfg;
        bad.d_v = 1;
        CHECK_THROWS_AS(synth_dataset(bad), ConfigError);
    }
}

TEST_CASE("episode files round-trip bit-exactly") {
    SynthConfig cfg;
    cfg.num_classes = 2;
    cfg.episodes_per_class = 2;
    const auto data = synth_dataset(cfg);
    const fs::path dir = fresh_dir("episode_io");

    SUBCASE("single episode: save, load, compare, re-save") {
        const fs::path a = dir / "a", b = dir / "b";
        save_episode(data[0], a);
        const Episode back = load_episode(a);
        CHECK(back.class_id == data[0].class_id);
        CHECK(back.annotation == data[0].annotation);
        CHECK(back.alignment == data[0].alignment);
        CHECK(back.text_embedding == data[0].text_embedding);
        REQUIRE(back.frames.size() == data[0].frames.size());
        for (std::size_t t = 0; t < back.frames.size(); ++t) {
            CHECK(back.frames[t].patch_embeddings ==
                  data[0].frames[t].patch_embeddings);
            CHECK(back.frames[t].attention == data[0].frames[t].attention);
            REQUIRE(back.frames[t].regions.size() ==
                    data[0].frames[t].regions.size());
            for (std::size_t r = 0; r < back.frames[t].regions.size(); ++r) {
                CHECK(back.frames[t].regions[r].name ==
                      data[0].frames[t].regions[r].name);
                CHECK(back.frames[t].regions[r].patches ==
                      data[0].frames[t].regions[r].patches);
            }
        }
        save_episode(back, b);
        for (const char* f : {"manifest.json", "visual.bin", "text.bin"})
            CHECK(slurp(a / f) == slurp(b / f));
    }
    SUBCASE("dataset directory") {
        const fs::path a = dir / "ds_a", b = dir / "ds_b";
        save_dataset(data, a);
        const auto back = load_dataset(a);
        REQUIRE(back.size() == data.size());
        for (std::size_t i = 0; i < back.size(); ++i) {
            CHECK(back[i].class_id == data[i].class_id);
            CHECK(back[i].text_embedding == data[i].text_embedding);
        }
        save_dataset(back, b);
        CHECK(slurp(a / "dataset.json") == slurp(b / "dataset.json"));
        CHECK(slurp(a / "episode_00000" / "visual.bin") ==
              slurp(b / "episode_00000" / "visual.bin"));
    }
    SUBCASE("corruption is a format error, absence an io error") {
        const fs::path c = dir / "c";
        save_episode(data[0], c);
        {
            std::ofstream os(c / "visual.bin",
                             std::ios::binary | std::ios::trunc);
            os << "MMGNOPE1";
        }
        CHECK_THROWS_AS(load_episode(c), FormatError);
        CHECK_THROWS_AS(load_episode(dir / "missing"), IoError);
    }

    fs::remove_all(dir);
}
