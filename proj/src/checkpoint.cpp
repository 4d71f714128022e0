#include "mmg/checkpoint.hpp"

#include "mmg/errors.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace mmg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("truncated checkpoint while reading " + what);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double d) {
    std::uint64_t v;
    static_assert(sizeof(v) == sizeof(d));
    std::memcpy(&v, &d, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is, const std::string& what) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw FormatError("truncated checkpoint while reading " + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

void put_values(std::ostream& os, const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(os, m(r, c));
}

void get_values(std::istream& is, Matrix& m, const std::string& what) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = get_f64(is, what);
}

json config_to_json(const ModelConfig& c) {
    return json{{"d_v", c.d_v},
                {"d_t", c.d_t},
                {"num_classes", c.num_classes},
                {"gat_layers", c.gat_layers},
                {"leaky_slope", c.leaky_slope},
                {"spatial_threshold", c.spatial_threshold},
                {"semantic_threshold", c.semantic_threshold},
                {"prune_threshold", c.prune_threshold},
                {"add_threshold", c.add_threshold},
                {"message_scaling", c.message_scaling},
                {"variant", to_string(c.variant)}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.d_v = j.at("d_v").get<int>();
    c.d_t = j.at("d_t").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.gat_layers = j.at("gat_layers").get<int>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.spatial_threshold = j.at("spatial_threshold").get<double>();
    c.semantic_threshold = j.at("semantic_threshold").get<double>();
    c.prune_threshold = j.at("prune_threshold").get<double>();
    c.add_threshold = j.at("add_threshold").get<double>();
    c.message_scaling = j.at("message_scaling").get<bool>();
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    return c;
}

} // namespace

void save_checkpoint(const ModelParams& params, const AdamState* adam,
                     const std::string& dir) {
    const auto named = params.named();
    if (adam && adam->initialized() &&
        adam->first_moment.size() != named.size())
        throw ShapeError("save_checkpoint: optimizer tracks " +
                         std::to_string(adam->first_moment.size()) +
                         " tensors, model has " +
                         std::to_string(named.size()));
    const bool with_adam = adam && adam->initialized();

    fs::create_directories(dir);
    std::uint32_t total = 0;
    json tensors = json::array();
    for (const auto& [name, t] : named) {
        tensors.push_back({{"name", name},
                           {"rows", t.rows()},
                           {"cols", t.cols()}});
        total += static_cast<std::uint32_t>(t.size());
    }
    if (with_adam) total *= 3;  // values, then both moment sets

    json manifest;
    manifest["config"] = config_to_json(params.config);
    manifest["tensors"] = std::move(tensors);
    manifest["blob"] = "params.bin";
    if (with_adam)
        manifest["adam"] = json{{"step_count", adam->step_count},
                                {"beta1", adam->beta1},
                                {"beta2", adam->beta2},
                                {"epsilon", adam->epsilon}};

    const fs::path base(dir);
    {
        std::ofstream os(base / "manifest.json");
        if (!os) throw IoError("cannot write " +
                               (base / "manifest.json").string());
        os << manifest.dump(2) << "\n";
    }
    std::ofstream os(base / "params.bin", std::ios::binary);
    if (!os) throw IoError("cannot write " + (base / "params.bin").string());
    os.write(kCheckpointMagic, 8);
    put_u32(os, total);
    put_u32(os, 1);  // layout revision
    for (const auto& [name, t] : named) put_values(os, t.value());
    if (with_adam) {
        for (const Matrix& m : adam->first_moment) put_values(os, m);
        for (const Matrix& m : adam->second_moment) put_values(os, m);
    }
    if (!os) throw IoError("write failed on " +
                           (base / "params.bin").string());
}

Checkpoint load_checkpoint(const std::string& dir) {
    const fs::path base(dir);
    std::ifstream ms(base / "manifest.json");
    if (!ms)
        throw IoError("cannot open " + (base / "manifest.json").string());
    json manifest;
    try {
        ms >> manifest;
    } catch (const json::exception& e) {
        throw FormatError((base / "manifest.json").string() + ": " +
                          e.what());
    }

    Checkpoint ck;
    try {
        ck.params = init_params(config_from_json(manifest.at("config")), 0);
        auto named = ck.params.named();
        const json& tensors = manifest.at("tensors");
        if (tensors.size() != named.size())
            throw FormatError("checkpoint lists " +
                              std::to_string(tensors.size()) +
                              " tensors, this configuration has " +
                              std::to_string(named.size()));
        for (std::size_t i = 0; i < named.size(); ++i) {
            const json& jt = tensors[i];
            if (jt.at("name").get<std::string>() != named[i].first ||
                jt.at("rows").get<Eigen::Index>() != named[i].second.rows() ||
                jt.at("cols").get<Eigen::Index>() != named[i].second.cols())
                throw FormatError("checkpoint tensor " +
                                  jt.at("name").get<std::string>() +
                                  " does not match the declared layout");
        }

        const fs::path blob =
            base / manifest.at("blob").get<std::string>();
        std::ifstream is(blob, std::ios::binary);
        if (!is) throw IoError("cannot open " + blob.string());
        char magic[8];
        if (!is.read(magic, 8) ||
            std::memcmp(magic, kCheckpointMagic, 8) != 0)
            throw FormatError("bad magic in " + blob.string() +
                              " (expected MMGCKPT1)");
        std::uint32_t total = get_u32(is, "value count");
        const std::uint32_t revision = get_u32(is, "layout revision");
        if (revision != 1)
            throw FormatError(blob.string() + ": unsupported layout revision " +
                              std::to_string(revision));

        ck.has_adam = manifest.contains("adam");
        std::uint32_t expect = 0;
        for (const auto& [name, t] : named)
            expect += static_cast<std::uint32_t>(t.size());
        if (ck.has_adam) expect *= 3;
        if (total != expect)
            throw FormatError(blob.string() + ": holds " +
                              std::to_string(total) + " values, expected " +
                              std::to_string(expect));

        for (auto& [name, t] : named) {
            Matrix m(t.rows(), t.cols());
            get_values(is, m, name);
            t.leaf_value() = m;
        }
        if (ck.has_adam) {
            const json& ja = manifest.at("adam");
            ck.adam.step_count = ja.at("step_count").get<long long>();
            ck.adam.beta1 = ja.at("beta1").get<double>();
            ck.adam.beta2 = ja.at("beta2").get<double>();
            ck.adam.epsilon = ja.at("epsilon").get<double>();
            for (const auto& [name, t] : named) {
                Matrix m(t.rows(), t.cols());
                get_values(is, m, "adam.m." + name);
                ck.adam.first_moment.push_back(std::move(m));
            }
            for (const auto& [name, t] : named) {
                Matrix m(t.rows(), t.cols());
                get_values(is, m, "adam.v." + name);
                ck.adam.second_moment.push_back(std::move(m));
            }
        }
    } catch (const json::exception& e) {
        throw FormatError((base / "manifest.json").string() + ": " +
                          e.what());
    }
    return ck;
}

} // namespace mmg
