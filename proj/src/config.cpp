#include "pcloc/config.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace pcloc {

namespace {

using json = nlohmann::json;

json to_json(const PipelineConfig& c) {
    json j;
    j["render"] = {{"delta_rel", c.render.delta_rel},
                   {"delta_min", c.render.delta_min},
                   {"filter_levels", c.render.filter_levels},
                   {"filter_ratio", c.render.filter_ratio},
                   {"depth_filter", c.render.depth_filter},
                   {"fill_holes", c.render.fill_holes}};
    j["features"] = {{"max_features", c.features.max_features},
                     {"fast_threshold", c.features.fast_threshold},
                     {"nms_radius", c.features.nms_radius},
                     {"mask_margin", c.features.mask_margin},
                     {"octaves", c.features.octaves},
                     {"scale_factor", c.features.scale_factor},
                     {"match_max_distance", c.features.match_max_distance},
                     {"match_ratio", c.features.match_ratio}};
    j["ransac"] = {{"max_iterations", c.ransac.max_iterations},
                   {"reproj_threshold", c.ransac.reproj_threshold},
                   {"confidence", c.ransac.confidence},
                   {"min_inliers", c.ransac.min_inliers},
                   {"seed", c.ransac.seed}};
    j["tracking"] = {{"max_consecutive_failures", c.max_consecutive_failures},
                     {"mask_close_radius", c.mask_close_radius}};
    j["relocalizer"] = {{"cubemap_resolution", c.cubemap_resolution}};
    j["map"] = {{"pitch_deg", c.pitch_deg},
                {"directions", c.map_directions},
                {"merge_max_hamming", c.merge_max_hamming},
                {"nearest_keyframes", c.nearest_keyframes}};
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    return j;
}

void from_json(const json& j, PipelineConfig& c) {
    if (j.contains("render")) {
        const auto& r = j["render"];
        c.render.delta_rel = r.value("delta_rel", c.render.delta_rel);
        c.render.delta_min = r.value("delta_min", c.render.delta_min);
        c.render.filter_levels = r.value("filter_levels", c.render.filter_levels);
        c.render.filter_ratio = r.value("filter_ratio", c.render.filter_ratio);
        c.render.depth_filter = r.value("depth_filter", c.render.depth_filter);
        c.render.fill_holes = r.value("fill_holes", c.render.fill_holes);
    }
    if (j.contains("features")) {
        const auto& f = j["features"];
        c.features.max_features = f.value("max_features", c.features.max_features);
        c.features.fast_threshold = f.value("fast_threshold", c.features.fast_threshold);
        c.features.nms_radius = f.value("nms_radius", c.features.nms_radius);
        c.features.mask_margin = f.value("mask_margin", c.features.mask_margin);
        c.features.octaves = f.value("octaves", c.features.octaves);
        c.features.scale_factor = f.value("scale_factor", c.features.scale_factor);
        c.features.match_max_distance = f.value("match_max_distance", c.features.match_max_distance);
        c.features.match_ratio = f.value("match_ratio", c.features.match_ratio);
    }
    if (j.contains("ransac")) {
        const auto& r = j["ransac"];
        c.ransac.max_iterations = r.value("max_iterations", c.ransac.max_iterations);
        c.ransac.reproj_threshold = r.value("reproj_threshold", c.ransac.reproj_threshold);
        c.ransac.confidence = r.value("confidence", c.ransac.confidence);
        c.ransac.min_inliers = r.value("min_inliers", c.ransac.min_inliers);
        c.ransac.seed = r.value("seed", c.ransac.seed);
    }
    if (j.contains("tracking")) {
        const auto& t = j["tracking"];
        c.max_consecutive_failures = t.value("max_consecutive_failures", c.max_consecutive_failures);
        c.mask_close_radius = t.value("mask_close_radius", c.mask_close_radius);
    }
    if (j.contains("relocalizer"))
        c.cubemap_resolution = j["relocalizer"].value("cubemap_resolution", c.cubemap_resolution);
    if (j.contains("map")) {
        const auto& m = j["map"];
        c.pitch_deg = m.value("pitch_deg", c.pitch_deg);
        c.map_directions = m.value("directions", c.map_directions);
        c.merge_max_hamming = m.value("merge_max_hamming", c.merge_max_hamming);
        c.nearest_keyframes = m.value("nearest_keyframes", c.nearest_keyframes);
    }
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
}

}  // namespace

std::string config_to_json(const PipelineConfig& config) { return to_json(config).dump(2); }

PipelineConfig config_from_json(const std::string& text) {
    PipelineConfig c;
    from_json(json::parse(text), c);
    return c;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    PipelineConfig c;
    json j;
    in >> j;
    from_json(j, c);
    return c;
}

void save_config(const PipelineConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open config file for writing: " + path);
    out << config_to_json(config) << "\n";
}

std::uint64_t config_hash(const PipelineConfig& config) {
    const std::string s = to_json(config).dump();
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char ch : s) {
        h ^= std::uint8_t(ch);
        h *= 0x100000001B3ULL;
    }
    return h;
}

void write_manifest(const std::string& path, const PipelineConfig& config,
                    std::uint64_t cloud_fingerprint, const std::string& command) {
    json j;
    j["version"] = "1.0.0";
    j["command"] = command;
    j["seed"] = config.seed;
    j["config_hash"] = config_hash(config);
    j["cloud_fingerprint"] = cloud_fingerprint;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace pcloc
