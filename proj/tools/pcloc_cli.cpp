// pcloc: point-cloud camera localization toolkit, single CLI entry point.
//
// Subcommands:
//   synth scene|scan|frames   generate scene JSON / PLY cloud / camera frames
//   render                    one-shot synthetic view (PNG + 16-bit depth PNG)
//   build-db                  relocalization keyframe database from cloud + roi
//   build-map                 prebuilt landmark map from cloud + roi
//   track                     run a frame sequence (render&match or prebuilt map)
//   reloc                     single-image global localization
//   eval ape|ssim|overlay|decimation-study
//
// Exit codes: 0 success, 1 pipeline failure, 2 usage error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "pcloc/config.hpp"
#include "pcloc/evaluation.hpp"
#include "pcloc/io.hpp"
#include "pcloc/map_builder.hpp"
#include "pcloc/point_cloud.hpp"
#include "pcloc/relocalizer.hpp"
#include "pcloc/renderer.hpp"
#include "pcloc/synth_world.hpp"
#include "pcloc/tracker.hpp"

namespace fs = std::filesystem;
using namespace pcloc;

namespace {

std::vector<double> parse_numbers(const std::string& text, char sep = ',') {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep)) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    return out;
}

// Shared camera-intrinsics options: either an explicit fx,fy,cx,cy,w,h string
// or width/height/fov (defaults give a 640x480, 70-degree camera).
struct IntrinsicsOpts {
    std::string explicit_k;
    int width = 640;
    int height = 480;
    double fov_deg = 70.0;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--intrinsics", explicit_k, "fx,fy,cx,cy,width,height");
        cmd->add_option("--width", width, "image width (px)")->capture_default_str();
        cmd->add_option("--height", height, "image height (px)")->capture_default_str();
        cmd->add_option("--fov-deg", fov_deg, "horizontal field of view (deg)")
            ->capture_default_str();
    }

    Intrinsics resolve() const {
        Intrinsics K;
        if (!explicit_k.empty()) {
            const auto v = parse_numbers(explicit_k);
            if (v.size() != 6) throw CLI::ValidationError("--intrinsics needs 6 values");
            K.fx = v[0];
            K.fy = v[1];
            K.cx = v[2];
            K.cy = v[3];
            K.width = int(v[4]);
            K.height = int(v[5]);
        } else {
            K.width = width;
            K.height = height;
            K.fx = K.fy = 0.5 * width / std::tan(0.5 * fov_deg * M_PI / 180.0);
            K.cx = 0.5 * width;
            K.cy = 0.5 * height;
        }
        if (!K.is_valid()) throw CLI::ValidationError("invalid intrinsics");
        return K;
    }
};

RigidPose parse_pose(const std::string& text) {
    const auto v = parse_numbers(text);
    if (v.size() != 7) throw CLI::ValidationError("--pose needs tx,ty,tz,qx,qy,qz,qw");
    RigidPose pose;
    pose.translation = Vec3(v[0], v[1], v[2]);
    Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);
    if (q.norm() < 1e-12) throw CLI::ValidationError("--pose quaternion is zero");
    pose.rotation = q.normalized().toRotationMatrix();
    return pose;
}

std::vector<Vec3> parse_points(const std::string& text) {
    std::vector<Vec3> out;
    std::stringstream ss(text);
    std::string group;
    while (std::getline(ss, group, ';')) {
        if (group.empty()) continue;
        const auto v = parse_numbers(group);
        if (v.size() != 3) throw CLI::ValidationError("points need x,y,z groups");
        out.emplace_back(v[0], v[1], v[2]);
    }
    return out;
}

// Default roi: the cloud's bounding box inset by one meter on x/y, one
// eye-level height band.
RegionOfInterest roi_from_cloud(const PointCloud& cloud, double grid_step) {
    if (cloud.empty()) throw std::runtime_error("empty cloud");
    Vec3 lo(1e30, 1e30, 1e30), hi(-1e30, -1e30, -1e30);
    for (const auto& p : cloud.points) {
        lo = lo.cwiseMin(p.cast<double>());
        hi = hi.cwiseMax(p.cast<double>());
    }
    RegionOfInterest roi;
    const Vec3 margin(1.0, 1.0, 0.0);
    roi.min_corner = lo + margin;
    roi.max_corner = hi - margin;
    roi.grid_step = grid_step;
    roi.height_levels = {std::min(1.6, 0.5 * (hi.z() - lo.z()))};
    return roi;
}

Scene load_scene_or_default(const std::string& path) {
    return path.empty() ? make_default_room() : load_scene(path);
}

std::string join_args(int argc, char** argv) {
    std::string cmd;
    for (int i = 0; i < argc; ++i) {
        if (i) cmd += ' ';
        cmd += argv[i];
    }
    return cmd;
}

void manifest_for(const std::string& out_path, const PipelineConfig& config,
                  std::uint64_t fingerprint, const std::string& command) {
    write_manifest(out_path + ".manifest.json", config, fingerprint, command);
}

// Prebuilt-map tracking loop shared by `track --mode pl` and tests: chained
// prior, prior reset on failure.
SequenceResult run_map_sequence(const std::function<ImageRgb(std::size_t)>& load_frame,
                                const std::vector<double>& timestamps, const Intrinsics& K,
                                const SlamMap& map, const PipelineConfig& config) {
    SequenceResult result;
    std::optional<RigidPose> prior;
    for (std::size_t i = 0; i < timestamps.size(); ++i) {
        FrameReport report;
        report.frame = int(i);
        report.timestamp = timestamps[i];
        const bool had_prior = prior.has_value();
        const auto est = localize_frame(load_frame(i), K, map, prior, config);
        if (est) {
            report.status = had_prior ? FrameStatus::Tracked : FrameStatus::Relocalized;
            report.stats.inliers = int(est->inlier_indices.size());
            report.stats.mean_reproj_px = est->mean_reproj_error;
            prior = est->pose;
            result.trajectory.poses.push_back({timestamps[i], est->pose});
        } else {
            report.status = FrameStatus::Lost;
            prior.reset();
        }
        result.reports.push_back(report);
    }
    return result;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pcloc: camera localization against colored point clouds"};
    app.require_subcommand(1);
    app.fallthrough();  // allow global flags (--config, --seed) after the subcommand

    PipelineConfig config;
    std::string config_path;
    app.add_option("--config", config_path, "pipeline config JSON")->envname("PCLOC_CONFIG");
    std::uint64_t seed_flag = 0;
    auto* seed_opt = app.add_option("--seed", seed_flag, "master random seed");
    int threads = 0;
    app.add_option("--threads", threads, "parallelism cap (0 = machine)");

    // ---- synth ----------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "synthetic scene / scan / frame generation");
    synth->require_subcommand(1);

    auto* synth_scene = synth->add_subcommand("scene", "write the built-in room scene JSON");
    std::string scene_out = "scene.json";
    double room_x = 8.0, room_y = 6.0, room_z = 3.0;
    synth_scene->add_option("--out", scene_out)->capture_default_str();
    synth_scene->add_option("--size-x", room_x)->capture_default_str();
    synth_scene->add_option("--size-y", room_y)->capture_default_str();
    synth_scene->add_option("--size-z", room_z)->capture_default_str();

    auto* synth_scan = synth->add_subcommand("scan", "simulate a LiDAR scan into a PLY cloud");
    std::string scan_scene_path, scan_out = "cloud.ply", scanners_text;
    double scan_res_deg = 0.2, scan_noise = 0.0, scan_range = 50.0;
    synth_scan->add_option("--scene", scan_scene_path, "scene JSON (default: built-in room)");
    synth_scan->add_option("--out", scan_out)->capture_default_str();
    synth_scan->add_option("--resolution-deg", scan_res_deg)->capture_default_str();
    synth_scan->add_option("--noise-sigma", scan_noise, "range noise (m)")->capture_default_str();
    synth_scan->add_option("--max-range", scan_range)->capture_default_str();
    synth_scan->add_option("--scanners", scanners_text, "x,y,z;x,y,z;... scanner positions");

    auto* synth_frames = synth->add_subcommand("frames", "ground-truth camera frames + trajectory");
    std::string frames_scene_path, frames_out = "frames", waypoints_text;
    double frame_rate = 30.0, speed = 1.5;
    IntrinsicsOpts frames_k;
    synth_frames->add_option("--scene", frames_scene_path, "scene JSON (default: built-in room)");
    synth_frames->add_option("--out", frames_out, "output directory")->capture_default_str();
    synth_frames->add_option("--rate", frame_rate, "frame rate (Hz)")->capture_default_str();
    synth_frames->add_option("--speed", speed, "camera speed (m/s)")->capture_default_str();
    synth_frames->add_option("--waypoints", waypoints_text,
                             "px,py,pz,lx,ly,lz;... position+look-at waypoints");
    frames_k.add_to(synth_frames);

    // ---- render ---------------------------------------------------------
    auto* render_cmd = app.add_subcommand("render", "render the cloud at a pose");
    std::string render_cloud, render_pose_text, render_out = "render";
    IntrinsicsOpts render_k;
    render_cmd->add_option("--cloud", render_cloud, "PLY cloud")->required();
    render_cmd->add_option("--pose", render_pose_text, "tx,ty,tz,qx,qy,qz,qw (camera-to-world)")
        ->required();
    render_cmd->add_option("--out", render_out, "output prefix")->capture_default_str();
    render_k.add_to(render_cmd);

    // ---- build-db / build-map ------------------------------------------
    auto* build_db = app.add_subcommand("build-db", "relocalization database from cloud + roi");
    std::string db_cloud, db_roi, db_out = "db.bin";
    double db_grid_step = 2.0;
    build_db->add_option("--cloud", db_cloud, "PLY cloud")->required();
    build_db->add_option("--roi", db_roi, "roi JSON (default: cloud bounding box)");
    build_db->add_option("--grid-step", db_grid_step, "default-roi grid step (m)")
        ->capture_default_str();
    build_db->add_option("--out", db_out)->capture_default_str();

    auto* build_map_cmd = app.add_subcommand("build-map", "prebuilt landmark map from cloud + roi");
    std::string map_cloud, map_roi, map_out = "map.bin";
    double map_grid_step = 2.0;
    IntrinsicsOpts map_k;
    build_map_cmd->add_option("--cloud", map_cloud, "PLY cloud")->required();
    build_map_cmd->add_option("--roi", map_roi, "roi JSON (default: cloud bounding box)");
    build_map_cmd->add_option("--grid-step", map_grid_step, "default-roi grid step (m)")
        ->capture_default_str();
    build_map_cmd->add_option("--out", map_out)->capture_default_str();
    map_k.add_to(build_map_cmd);

    // ---- track ----------------------------------------------------------
    auto* track = app.add_subcommand("track", "localize a frame sequence");
    std::string track_mode = "rm", track_frames, track_cloud, track_db, track_map;
    std::string track_traj = "trajectory.txt", track_report = "report.csv";
    IntrinsicsOpts track_k;
    track->add_option("--mode", track_mode, "rm (render & match) or pl (prebuilt map)")
        ->check(CLI::IsMember({"rm", "pl"}))
        ->capture_default_str();
    track->add_option("--frames", track_frames, "frame index file")->required();
    track->add_option("--cloud", track_cloud, "PLY cloud (rm mode)");
    track->add_option("--db", track_db, "relocalization database (rm mode)");
    track->add_option("--map", track_map, "prebuilt map (pl mode)");
    track->add_option("--out-traj", track_traj)->capture_default_str();
    track->add_option("--out-report", track_report)->capture_default_str();
    track_k.add_to(track);

    // ---- reloc ----------------------------------------------------------
    auto* reloc = app.add_subcommand("reloc", "single-image global localization");
    std::string reloc_image, reloc_cloud, reloc_db, reloc_out = "pose.txt";
    IntrinsicsOpts reloc_k;
    reloc->add_option("--image", reloc_image)->required();
    reloc->add_option("--cloud", reloc_cloud, "PLY cloud")->required();
    reloc->add_option("--db", reloc_db, "relocalization database")->required();
    reloc->add_option("--out", reloc_out, "single-line trajectory file")->capture_default_str();
    reloc_k.add_to(reloc);

    // ---- eval -----------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "metrics and studies");
    eval->require_subcommand(1);

    auto* eval_ape = eval->add_subcommand("ape", "absolute pose error after alignment");
    std::string ape_est, ape_gt, ape_mode = "se3", ape_out;
    eval_ape->add_option("--est", ape_est, "estimated trajectory")->required();
    eval_ape->add_option("--gt", ape_gt, "ground-truth trajectory")->required();
    eval_ape->add_option("--mode", ape_mode)->check(CLI::IsMember({"se3", "sim3"}))
        ->capture_default_str();
    eval_ape->add_option("--out", ape_out, "optional CSV output");

    auto* eval_ssim = eval->add_subcommand("ssim", "structural similarity of two images");
    std::string ssim_a, ssim_b;
    eval_ssim->add_option("--a", ssim_a)->required();
    eval_ssim->add_option("--b", ssim_b)->required();

    auto* eval_overlay = eval->add_subcommand("overlay", "blend camera frame and render");
    std::string ov_cam, ov_render, ov_out = "overlay.png";
    double ov_alpha = 0.5;
    eval_overlay->add_option("--camera", ov_cam)->required();
    eval_overlay->add_option("--render", ov_render)->required();
    eval_overlay->add_option("--alpha", ov_alpha)->capture_default_str();
    eval_overlay->add_option("--out", ov_out)->capture_default_str();

    auto* eval_study = eval->add_subcommand("decimation-study", "per-level end-to-end study");
    std::string st_cloud, st_frames, st_gt, st_roi, st_mode = "rm", st_levels = "1.0,0.5,0.1";
    std::string st_out = "study.csv";
    bool st_point_arm = false;
    double st_grid_step = 2.0;
    IntrinsicsOpts st_k;
    eval_study->add_option("--cloud", st_cloud)->required();
    eval_study->add_option("--frames", st_frames, "frame index file")->required();
    eval_study->add_option("--gt", st_gt, "ground-truth trajectory")->required();
    eval_study->add_option("--roi", st_roi, "roi JSON (default: cloud bounding box)");
    eval_study->add_option("--grid-step", st_grid_step)->capture_default_str();
    eval_study->add_option("--mode", st_mode)->check(CLI::IsMember({"rm", "pl"}))
        ->capture_default_str();
    eval_study->add_option("--levels", st_levels, "comma-separated fractions")
        ->capture_default_str();
    eval_study->add_flag("--point-based-arm", st_point_arm,
                         "also run with depth filter and hole filling disabled");
    eval_study->add_option("--out", st_out)->capture_default_str();
    st_k.add_to(eval_study);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const std::string command = join_args(argc, argv);
    try {
        if (!config_path.empty()) config = load_config(config_path);
        if (seed_opt->count()) config.seed = seed_flag;
        config.ransac.seed = config.seed;
        config.threads = threads;

        if (synth_scene->parsed()) {
            const Scene scene = make_default_room(room_x, room_y, room_z, config.seed | 1);
            save_scene(scene, scene_out);
            manifest_for(scene_out, config, 0, command);
        } else if (synth_scan->parsed()) {
            const Scene scene = load_scene_or_default(scan_scene_path);
            ScanConfig scan;
            scan.angular_resolution = scan_res_deg * M_PI / 180.0;
            scan.range_noise_sigma = scan_noise;
            scan.max_range = scan_range;
            if (!scanners_text.empty()) {
                scan.scanner_positions = parse_points(scanners_text);
            } else {
                // Three spread-out positions inside the default room.
                Vec3 lo = scene.boxes.front().min_corner, hi = scene.boxes.front().max_corner;
                const double z = lo.z() + 0.6 * (hi.z() - lo.z());
                scan.scanner_positions = {
                    Vec3(lo.x() + 0.25 * (hi.x() - lo.x()), lo.y() + 0.3 * (hi.y() - lo.y()), z),
                    Vec3(lo.x() + 0.75 * (hi.x() - lo.x()), lo.y() + 0.3 * (hi.y() - lo.y()), z),
                    Vec3(lo.x() + 0.5 * (hi.x() - lo.x()), lo.y() + 0.78 * (hi.y() - lo.y()), z)};
            }
            const PointCloud cloud = simulate_lidar(scene, scan, config.seed);
            save_ply(cloud, scan_out);
            manifest_for(scan_out, config, cloud_fingerprint(cloud), command);
            std::cerr << "scanned " << cloud.size() << " points\n";
        } else if (synth_frames->parsed()) {
            const Scene scene = load_scene_or_default(frames_scene_path);
            const Intrinsics K = frames_k.resolve();
            TrajectorySpec spec;
            spec.frame_rate = frame_rate;
            spec.speed = speed;
            if (!waypoints_text.empty()) {
                std::stringstream ss(waypoints_text);
                std::string group;
                while (std::getline(ss, group, ';')) {
                    if (group.empty()) continue;
                    const auto v = parse_numbers(group);
                    if (v.size() != 6)
                        throw std::runtime_error("--waypoints needs px,py,pz,lx,ly,lz groups");
                    spec.waypoints.push_back({Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])});
                }
            } else {
                // Closed loop around the room at eye level, looking inward.
                Vec3 lo = scene.boxes.front().min_corner, hi = scene.boxes.front().max_corner;
                const Vec3 center = 0.5 * (lo + hi);
                const Vec3 look(center.x(), center.y(), 0.5 * (lo.z() + hi.z()));
                auto at = [&](double fx, double fy) {
                    return Vec3(lo.x() + fx * (hi.x() - lo.x()), lo.y() + fy * (hi.y() - lo.y()),
                                1.5);
                };
                for (const Vec3& p :
                     {at(0.15, 0.17), at(0.85, 0.17), at(0.85, 0.80), at(0.38, 0.80),
                      at(0.15, 0.58), at(0.15, 0.17)})
                    spec.waypoints.push_back({p, look});
            }
            const Trajectory traj = generate_trajectory(spec);
            fs::create_directories(frames_out);
            FrameSequence seq;
            for (std::size_t i = 0; i < traj.size(); ++i) {
                char name[32];
                std::snprintf(name, sizeof(name), "frame_%05zu.png", i);
                const ImageRgb frame = render_camera_frame(scene, traj.poses[i].pose, K);
                save_png(frame, (fs::path(frames_out) / name).string());
                seq.timestamps.push_back(traj.poses[i].timestamp);
                seq.paths.push_back(name);
            }
            const std::string index_path = (fs::path(frames_out) / "index.txt").string();
            save_frame_index(seq, index_path);
            save_trajectory(traj, (fs::path(frames_out) / "gt.txt").string());
            manifest_for(index_path, config, 0, command);
            std::cerr << "wrote " << traj.size() << " frames to " << frames_out << "\n";
        } else if (render_cmd->parsed()) {
            const PointCloud cloud = load_ply(render_cloud);
            const Intrinsics K = render_k.resolve();
            const Framebuffer fb = render(cloud, parse_pose(render_pose_text), K, config.render);
            save_png(fb.color, render_out + ".png");
            save_depth_png(fb.depth, fb.width, fb.height, render_out + "_depth.png");
            manifest_for(render_out + ".png", config, cloud_fingerprint(cloud), command);
        } else if (build_db->parsed()) {
            const PointCloud cloud = load_ply(db_cloud);
            const RegionOfInterest roi =
                db_roi.empty() ? roi_from_cloud(cloud, db_grid_step) : load_roi(db_roi);
            const KeyframeDatabase db = build_database(cloud, roi, config);
            save_database(db, db_out);
            manifest_for(db_out, config, db.cloud_fingerprint, command);
            std::cerr << "database: " << db.records.size() << " keyframe records\n";
        } else if (build_map_cmd->parsed()) {
            const PointCloud cloud = load_ply(map_cloud);
            const RegionOfInterest roi =
                map_roi.empty() ? roi_from_cloud(cloud, map_grid_step) : load_roi(map_roi);
            const SlamMap map = build_map(cloud, roi, map_k.resolve(), config);
            check_map_invariants(map);
            save_map(map, map_out);
            manifest_for(map_out, config, map.cloud_fingerprint, command);
            std::cerr << "map: " << map.keyframes.size() << " keyframes, "
                      << map.landmarks.size() << " landmarks\n";
        } else if (track->parsed()) {
            const Intrinsics K = track_k.resolve();
            const FrameSequence seq = load_frame_index(track_frames);
            auto loader = [&](std::size_t i) { return load_image(seq.paths[i]); };
            SequenceResult result;
            std::uint64_t fingerprint = 0;
            if (track_mode == "rm") {
                if (track_cloud.empty() || track_db.empty())
                    throw std::runtime_error("track --mode rm needs --cloud and --db");
                const PointCloud cloud = load_ply(track_cloud);
                fingerprint = cloud_fingerprint(cloud);
                const KeyframeDatabase db = load_database(track_db);
                result = run_sequence(loader, seq.timestamps, K, cloud, db, config);
            } else {
                if (track_map.empty()) throw std::runtime_error("track --mode pl needs --map");
                const SlamMap map = load_map(track_map);
                fingerprint = map.cloud_fingerprint;
                result = run_map_sequence(loader, seq.timestamps, K, map, config);
            }
            save_trajectory(result.trajectory, track_traj);
            save_report_csv(result, track_report);
            manifest_for(track_traj, config, fingerprint, command);
            std::cerr << "localized " << result.localized() << "/" << seq.size() << " frames\n";
            if (result.localized() == 0) return 1;
        } else if (reloc->parsed()) {
            const PointCloud cloud = load_ply(reloc_cloud);
            const KeyframeDatabase db = load_database(reloc_db);
            const auto est =
                relocalize(load_image(reloc_image), reloc_k.resolve(), db, cloud, config);
            if (!est) {
                std::cerr << "relocalization failed\n";
                return 1;
            }
            Trajectory traj;
            traj.poses.push_back({0.0, est->pose});
            save_trajectory(traj, reloc_out);
            manifest_for(reloc_out, config, cloud_fingerprint(cloud), command);
            std::cerr << "relocalized with " << est->inlier_indices.size() << " inliers\n";
        } else if (eval_ape->parsed()) {
            const auto result = ape_rmse(load_trajectory(ape_est), load_trajectory(ape_gt),
                                         ape_mode == "sim3" ? AlignMode::Sim3 : AlignMode::SE3);
            std::cout << "pos_rmse_m " << result.pos_rmse << "\nang_rmse_deg "
                      << result.ang_rmse_deg << "\nn_matched " << result.n_matched
                      << "\nn_estimated " << result.n_estimated << "\n";
            if (!ape_out.empty()) {
                std::ofstream out(ape_out);
                out << "pos_rmse_m,ang_rmse_deg,n_matched,n_estimated\n"
                    << result.pos_rmse << ',' << result.ang_rmse_deg << ',' << result.n_matched
                    << ',' << result.n_estimated << '\n';
            }
        } else if (eval_ssim->parsed()) {
            std::cout << ssim(load_image(ssim_a), load_image(ssim_b)) << "\n";
        } else if (eval_overlay->parsed()) {
            save_png(overlay(load_image(ov_cam), load_image(ov_render), ov_alpha), ov_out);
        } else if (eval_study->parsed()) {
            const PointCloud cloud = load_ply(st_cloud);
            const RegionOfInterest roi =
                st_roi.empty() ? roi_from_cloud(cloud, st_grid_step) : load_roi(st_roi);
            const FrameSequence seq = load_frame_index(st_frames);
            auto loader = [&](std::size_t i) { return load_image(seq.paths[i]); };
            const auto rows = decimation_study(
                cloud, loader, seq.timestamps, st_k.resolve(), load_trajectory(st_gt), roi,
                parse_numbers(st_levels),
                st_mode == "pl" ? TrackMode::Prebuilt : TrackMode::RenderMatch, st_point_arm,
                config);
            save_study_csv(rows, st_out);
            manifest_for(st_out, config, cloud_fingerprint(cloud), command);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
