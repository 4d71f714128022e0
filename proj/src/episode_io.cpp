#include "mmg/episode_io.hpp"

#include "mmg/errors.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

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
        throw FormatError("truncated blob while reading " + what);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float f) {
    std::uint32_t v;
    static_assert(sizeof(v) == sizeof(f));
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}

float get_f32(std::istream& is, const std::string& what) {
    const std::uint32_t v = get_u32(is, what);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

void put_magic(std::ostream& os) { os.write(kEpisodeMagic, 8); }

void check_magic(std::istream& is, const fs::path& path) {
    char m[8];
    if (!is.read(m, 8) || std::memcmp(m, kEpisodeMagic, 8) != 0)
        throw FormatError("bad magic in " + path.string() +
                          " (expected MMGEMB01)");
}

// Section: two u32 dims then rows*cols float32 values, row-major.
void put_section(std::ostream& os, const Matrix& m) {
    put_u32(os, static_cast<std::uint32_t>(m.rows()));
    put_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            put_f32(os, static_cast<float>(m(r, c)));
}

Matrix get_section(std::istream& is, const fs::path& path,
                   Eigen::Index want_rows, Eigen::Index want_cols,
                   const std::string& what) {
    const std::uint32_t rows = get_u32(is, what + " rows");
    const std::uint32_t cols = get_u32(is, what + " cols");
    if (static_cast<Eigen::Index>(rows) != want_rows ||
        static_cast<Eigen::Index>(cols) != want_cols) {
        std::ostringstream os;
        os << path.string() << ": " << what << " is " << rows << "x" << cols
           << " but the manifest declares " << want_rows << "x" << want_cols;
        throw FormatError(os.str());
    }
    Matrix m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c)
            m(r, c) = static_cast<double>(get_f32(is, what));
    return m;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + p.string());
    return os;
}

std::ifstream open_in(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw IoError("cannot open " + p.string());
    return is;
}

json load_json(const fs::path& p) {
    std::ifstream is = open_in(p);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw FormatError(p.string() + ": " + e.what());
    }
    return j;
}

void dump_json(const json& j, const fs::path& p) {
    std::ofstream os(p, std::ios::trunc);
    if (!os) throw IoError("cannot write " + p.string());
    os << j.dump(2) << "\n";
}

} // namespace

void save_episode(const Episode& ep, const fs::path& dir) {
    validate_episode(ep);
    if (ep.frames.empty()) throw Error("save_episode: episode has no frames");
    const auto T = static_cast<Eigen::Index>(ep.frames.size());
    const Eigen::Index N = ep.frames[0].patch_embeddings.rows();
    const Eigen::Index dv = ep.frames[0].patch_embeddings.cols();
    for (const FrameData& f : ep.frames)
        if (f.patch_embeddings.rows() != N || f.patch_embeddings.cols() != dv)
            throw ShapeError("save_episode: frames disagree on patch shape");

    fs::create_directories(dir);

    {
        std::ofstream os = open_out(dir / "visual.bin");
        put_magic(os);
        Matrix patches(T * N, dv);
        Matrix attention(T, N);
        for (Eigen::Index t = 0; t < T; ++t) {
            patches.middleRows(t * N, N) = ep.frames[t].patch_embeddings;
            attention.row(t) = ep.frames[t].attention.transpose();
        }
        put_section(os, patches);
        put_section(os, attention);
        if (!os) throw IoError("short write to " + (dir / "visual.bin").string());
    }
    {
        std::ofstream os = open_out(dir / "text.bin");
        put_magic(os);
        put_section(os, Matrix(ep.text_embedding.transpose()));
        if (!os) throw IoError("short write to " + (dir / "text.bin").string());
    }

    json manifest;
    manifest["class_id"] = ep.class_id;
    manifest["label"] = ep.annotation;
    manifest["frames"] = ep.frames.size();
    manifest["patches"] = N;
    manifest["d_v"] = dv;
    manifest["d_t"] = ep.text_embedding.size();
    manifest["alignment"] = ep.alignment;
    json regions = json::array();
    for (const FrameData& f : ep.frames) {
        json per_frame = json::array();
        for (const Region& r : f.regions)
            per_frame.push_back({{"name", r.name}, {"patches", r.patches}});
        regions.push_back(per_frame);
    }
    manifest["regions"] = regions;
    manifest["blobs"] = {{"visual", "visual.bin"}, {"text", "text.bin"}};
    dump_json(manifest, dir / "manifest.json");
}

Episode load_episode(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath))
        throw IoError("no manifest at " + mpath.string());
    const json manifest = load_json(mpath);

    Episode ep;
    Eigen::Index T = 0, N = 0, dv = 0, dt = 0;
    try {
        ep.class_id = manifest.at("class_id").get<int>();
        ep.annotation = manifest.at("label").get<std::string>();
        T = manifest.at("frames").get<Eigen::Index>();
        N = manifest.at("patches").get<Eigen::Index>();
        dv = manifest.at("d_v").get<Eigen::Index>();
        dt = manifest.at("d_t").get<Eigen::Index>();
        ep.alignment = manifest.at("alignment").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw FormatError(mpath.string() + ": " + e.what());
    }
    if (T < 1 || N < 1 || dv < 1 || dt < 1)
        throw FormatError(mpath.string() + ": non-positive dimension");

    const fs::path vpath =
        dir / manifest.at("blobs").at("visual").get<std::string>();
    const fs::path tpath =
        dir / manifest.at("blobs").at("text").get<std::string>();

    Matrix patches, attention;
    {
        std::ifstream is = open_in(vpath);
        check_magic(is, vpath);
        patches = get_section(is, vpath, T * N, dv, "patch embeddings");
        attention = get_section(is, vpath, T, N, "attention scores");
    }
    Matrix text;
    {
        std::ifstream is = open_in(tpath);
        check_magic(is, tpath);
        text = get_section(is, tpath, 1, dt, "text embedding");
    }
    ep.text_embedding = text.row(0).transpose();

    ep.frames.resize(static_cast<std::size_t>(T));
    for (Eigen::Index t = 0; t < T; ++t) {
        FrameData& f = ep.frames[static_cast<std::size_t>(t)];
        f.patch_embeddings = patches.middleRows(t * N, N);
        f.attention = attention.row(t).transpose();
    }

    try {
        const json& regions = manifest.at("regions");
        if (static_cast<Eigen::Index>(regions.size()) != T)
            throw FormatError(mpath.string() + ": regions cover " +
                              std::to_string(regions.size()) + " frames");
        for (Eigen::Index t = 0; t < T; ++t) {
            for (const json& jr : regions[static_cast<std::size_t>(t)]) {
                Region r;
                r.name = jr.at("name").get<std::string>();
                r.patches = jr.at("patches").get<std::vector<int>>();
                ep.frames[static_cast<std::size_t>(t)].regions.push_back(
                    std::move(r));
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(mpath.string() + ": " + e.what());
    }

    // Episodes saved without regions fall back to proposing them from the
    // attention map.
    for (FrameData& f : ep.frames)
        if (f.regions.empty())
            f.regions = extract_regions(f.attention, 0.75);

    validate_episode(ep);
    return ep;
}

void save_dataset(const std::vector<Episode>& ds, const fs::path& dir) {
    fs::create_directories(dir);
    json index;
    json names = json::array();
    int max_class = -1;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::ostringstream name;
        name << "episode_" << std::setw(5) << std::setfill('0') << i;
        save_episode(ds[i], dir / name.str());
        names.push_back(name.str());
        max_class = std::max(max_class, ds[i].class_id);
    }
    index["episodes"] = names;
    index["num_classes"] = max_class + 1;
    dump_json(index, dir / "dataset.json");
}

std::vector<Episode> load_dataset(const fs::path& dir) {
    const fs::path ipath = dir / "dataset.json";
    if (!fs::exists(ipath)) throw IoError("no dataset index at " + ipath.string());
    const json index = load_json(ipath);
    std::vector<Episode> out;
    try {
        for (const json& name : index.at("episodes"))
            out.push_back(load_episode(dir / name.get<std::string>()));
    } catch (const json::exception& e) {
        throw FormatError(ipath.string() + ": " + e.what());
    }
    return out;
}

} // namespace mmg
