#include "pcloc/point_cloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pcloc/rng.hpp"

namespace pcloc {

namespace {

struct PlyProperty {
    std::string name;
    std::string type;
};

std::size_t type_size(const std::string& t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
        t == "float32")
        return 4;
    if (t == "double" || t == "float64") return 8;
    throw std::runtime_error("ply: unsupported property type " + t);
}

double read_binary_scalar(const char* p, const std::string& t) {
    if (t == "float" || t == "float32") {
        float v;
        std::memcpy(&v, p, 4);
        return v;
    }
    if (t == "double" || t == "float64") {
        double v;
        std::memcpy(&v, p, 8);
        return v;
    }
    if (t == "uchar" || t == "uint8") return double(*reinterpret_cast<const std::uint8_t*>(p));
    if (t == "char" || t == "int8") return double(*reinterpret_cast<const std::int8_t*>(p));
    if (t == "ushort" || t == "uint16") {
        std::uint16_t v;
        std::memcpy(&v, p, 2);
        return v;
    }
    if (t == "short" || t == "int16") {
        std::int16_t v;
        std::memcpy(&v, p, 2);
        return v;
    }
    if (t == "uint" || t == "uint32") {
        std::uint32_t v;
        std::memcpy(&v, p, 4);
        return v;
    }
    if (t == "int" || t == "int32") {
        std::int32_t v;
        std::memcpy(&v, p, 4);
        return v;
    }
    throw std::runtime_error("ply: unsupported property type " + t);
}

}  // namespace

PointCloud load_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open ply file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("ply: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "ply") throw std::runtime_error("ply: missing magic");

    std::string format;
    std::size_t vertex_count = 0;
    std::vector<PlyProperty> props;
    bool in_vertex_element = false;

    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "comment" || tok.empty()) continue;
        if (tok == "format") {
            ss >> format;
        } else if (tok == "element") {
            std::string name;
            std::size_t count;
            ss >> name >> count;
            in_vertex_element = (name == "vertex");
            if (in_vertex_element) vertex_count = count;
            else if (count > 0)
                throw std::runtime_error("ply: non-vertex elements are not supported");
        } else if (tok == "property") {
            if (!in_vertex_element) continue;
            PlyProperty p;
            ss >> p.type >> p.name;
            if (p.type == "list") throw std::runtime_error("ply: list vertex properties unsupported");
            props.push_back(p);
        } else if (tok == "end_header") {
            break;
        }
    }
    if (format != "ascii" && format != "binary_little_endian")
        throw std::runtime_error("ply: unsupported format " + format);
    if (vertex_count == 0) throw std::runtime_error("ply: no vertices");

    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
    for (int i = 0; i < int(props.size()); ++i) {
        const auto& n = props[i].name;
        if (n == "x") ix = i;
        else if (n == "y") iy = i;
        else if (n == "z") iz = i;
        else if (n == "red") ir = i;
        else if (n == "green") ig = i;
        else if (n == "blue") ib = i;
    }
    if (ix < 0 || iy < 0 || iz < 0) throw std::runtime_error("ply: missing x/y/z properties");
    const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;

    PointCloud cloud;
    cloud.points.reserve(vertex_count);
    cloud.colors.reserve(vertex_count);

    std::vector<double> row(props.size());
    if (format == "ascii") {
        for (std::size_t v = 0; v < vertex_count; ++v) {
            for (std::size_t i = 0; i < props.size(); ++i)
                if (!(in >> row[i])) throw std::runtime_error("ply: truncated ascii data");
            cloud.points.emplace_back(float(row[ix]), float(row[iy]), float(row[iz]));
            if (has_color)
                cloud.colors.push_back({std::uint8_t(row[ir]), std::uint8_t(row[ig]),
                                        std::uint8_t(row[ib])});
            else
                cloud.colors.push_back({128, 128, 128});
        }
    } else {
        std::size_t stride = 0;
        std::vector<std::size_t> offsets(props.size());
        for (std::size_t i = 0; i < props.size(); ++i) {
            offsets[i] = stride;
            stride += type_size(props[i].type);
        }
        std::vector<char> buf(stride * vertex_count);
        if (!in.read(buf.data(), std::streamsize(buf.size())))
            throw std::runtime_error("ply: truncated binary data");
        for (std::size_t v = 0; v < vertex_count; ++v) {
            const char* p = buf.data() + v * stride;
            cloud.points.emplace_back(float(read_binary_scalar(p + offsets[ix], props[ix].type)),
                                      float(read_binary_scalar(p + offsets[iy], props[iy].type)),
                                      float(read_binary_scalar(p + offsets[iz], props[iz].type)));
            if (has_color)
                cloud.colors.push_back(
                    {std::uint8_t(read_binary_scalar(p + offsets[ir], props[ir].type)),
                     std::uint8_t(read_binary_scalar(p + offsets[ig], props[ig].type)),
                     std::uint8_t(read_binary_scalar(p + offsets[ib], props[ib].type))});
            else
                cloud.colors.push_back({128, 128, 128});
        }
    }
    for (const auto& p : cloud.points)
        if (!p.allFinite()) throw std::runtime_error("ply: non-finite coordinates");
    if (cloud.empty()) throw std::runtime_error("ply: empty cloud");
    return cloud;
}

void save_ply(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open ply file for writing: " + path);
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << cloud.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        << "end_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        float xyz[3] = {cloud.points[i].x(), cloud.points[i].y(), cloud.points[i].z()};
        out.write(reinterpret_cast<const char*>(xyz), 12);
        out.write(reinterpret_cast<const char*>(cloud.colors[i].data()), 3);
    }
}

std::uint64_t cloud_fingerprint(const PointCloud& cloud) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto mix = [&h](const std::uint8_t* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001B3ULL;
        }
    };
    const std::uint64_t count = cloud.size();
    mix(reinterpret_cast<const std::uint8_t*>(&count), 8);
    const std::size_t total = cloud.size() * sizeof(Eigen::Vector3f);
    const auto* raw = reinterpret_cast<const std::uint8_t*>(cloud.points.data());
    const std::size_t head = std::min<std::size_t>(1024, total);
    mix(raw, head);
    if (total > head) {
        const std::size_t tail = std::min<std::size_t>(1024, total - head);
        mix(raw + total - tail, tail);
    }
    return h;
}

PointCloud decimate(const PointCloud& cloud, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::runtime_error("decimate: fraction must be in (0, 1]");
    if (fraction == 1.0) return cloud;
    const std::size_t keep = std::size_t(std::llround(fraction * double(cloud.size())));
    // Partial Fisher-Yates over an index permutation, then sorted to keep
    // the original point order (stable under seed).
    std::vector<std::uint32_t> idx(cloud.size());
    for (std::uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < keep; ++i) {
        const std::size_t j = i + rng.next_below(std::uint32_t(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    PointCloud out;
    out.points.reserve(keep);
    out.colors.reserve(keep);
    for (auto i : idx) {
        out.points.push_back(cloud.points[i]);
        out.colors.push_back(cloud.colors[i]);
    }
    return out;
}

}  // namespace pcloc
