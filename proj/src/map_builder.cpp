#include "pcloc/map_builder.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "pcloc/detail/binary_io.hpp"
#include "pcloc/renderer.hpp"
#include "pcloc/synth_world.hpp"

namespace pcloc {

namespace {

struct UnionFind {
    std::vector<int> parent;

    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }

    int find(int i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    }

    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a > b) std::swap(a, b);  // smaller id stays representative
        parent[b] = a;
    }
};

// Re-triangulate each landmark from its observation rays. The lifted
// position inherits the splat depth at the keypoint pixel, which belongs to
// a cloud point up to a splat radius away; on surfaces seen at grazing
// incidence that slides the landmark centimeters *along* the surface (it
// stays on the surface, so a surface-distance audit cannot see it, but its
// projection into any other view is biased). The observation rays pass
// through the detected texture feature itself and the keyframe poses are
// exact grid poses, so the least-squares ray intersection removes the bias;
// depth is only needed for association. Landmarks whose rays are too
// parallel to intersect reliably keep the lifted mean.
void triangulate_landmarks(SlamMap& map) {
    for (auto& lm : map.landmarks) {
        Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
        Vec3 b = Vec3::Zero();
        for (const auto& obs : lm.observations) {
            const MapKeyframe& kf = map.keyframes[obs.landmark_id];
            const auto& pix = kf.features.keypoints[obs.keypoint_index].position;
            const Vec3 dir_cam((pix.u - kf.intrinsics.cx) / kf.intrinsics.fx,
                               (pix.v - kf.intrinsics.cy) / kf.intrinsics.fy, 1.0);
            const Vec3 d = (kf.pose.rotation * dir_cam).normalized();
            const Eigen::Matrix3d P = Eigen::Matrix3d::Identity() - d * d.transpose();
            A += P;
            b += P * kf.pose.translation;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(A);
        // Smallest eigenvalue ~ 2 sin^2(theta/2) per ray pair; 0.02 admits
        // pairs separated by ~11 degrees and up.
        if (eig.eigenvalues()(0) < 0.02) continue;
        const Vec3 x = A.ldlt().solve(b);
        // Sanity: stay near the lifted estimate and in front of every camera.
        if ((x - lm.position).norm() > 0.1) continue;
        bool in_front = true;
        for (const auto& obs : lm.observations) {
            const MapKeyframe& kf = map.keyframes[obs.landmark_id];
            if (kf.pose.inverse().apply(x).z() <= 0.0) in_front = false;
        }
        if (in_front) lm.position = x;
    }
}

}  // namespace

SlamMap build_map(const PointCloud& cloud, const RegionOfInterest& roi, const Intrinsics& K_cam,
                  const PipelineConfig& config) {
    if (!K_cam.is_valid()) throw std::runtime_error("build_map: invalid intrinsics");
    SlamMap map;
    map.cloud_fingerprint = cloud_fingerprint(cloud);
    map.config_hash = config_hash(config);

    const double pitch = config.pitch_deg * M_PI / 180.0;
    std::vector<double> pitches = {pitch, -pitch};
    if (config.pitch_deg == 0.0) pitches = {0.0};

    std::uint32_t next_landmark = 0;
    for (const Vec3& pos : roi.grid_positions()) {
        for (int d = 0; d < config.map_directions; ++d) {
            const double yaw = 2.0 * M_PI * d / config.map_directions;
            for (double p : pitches) {
                const Vec3 forward(std::cos(p) * std::cos(yaw), std::cos(p) * std::sin(yaw),
                                   std::sin(p));
                const RigidPose pose = look_at_pose(pos, pos + forward);
                Framebuffer fb;
                try {
                    fb = render(cloud, pose, K_cam, config.render);
                } catch (const UnrenderableView&) {
                    continue;
                }
                const auto mask = closed_validity_mask(fb, config.mask_close_radius);
                FeatureSet fs = detect_and_describe(fb.color, config.features, &mask);
                if (fs.size() == 0) continue;

                MapKeyframe kf;
                kf.id = std::uint32_t(map.keyframes.size());
                kf.pose = pose;
                kf.intrinsics = K_cam;
                kf.features = std::move(fs);
                for (std::uint32_t i = 0; i < kf.features.size(); ++i) {
                    const auto& kp = kf.features.keypoints[i];
                    const int px = std::clamp(int(std::floor(kp.position.u)), 0, fb.width - 1);
                    const int py = std::clamp(int(std::floor(kp.position.v)), 0, fb.height - 1);
                    const std::size_t idx = fb.idx(px, py);
                    // Landmarks come only from measured (non-inpainted) depth.
                    if (!fb.valid[idx]) continue;
                    Landmark lm;
                    lm.id = next_landmark++;
                    lm.position = back_project(kp.position, fb.depth[idx], pose, K_cam);
                    lm.descriptor = kf.features.descriptors[i];
                    lm.observations.push_back({kf.id, i});
                    kf.observations.push_back({lm.id, i});
                    map.landmarks.push_back(std::move(lm));
                }
                map.keyframes.push_back(std::move(kf));
            }
        }
    }
    if (map.keyframes.empty()) throw std::runtime_error("build_map: roi yields no keyframes");

    merge_landmarks(map, config);
    prune_landmarks(map);
    triangulate_landmarks(map);
    return map;
}

void merge_landmarks(SlamMap& map, const PipelineConfig& config) {
    const int n = int(map.landmarks.size());
    if (n == 0) return;

    // Per keyframe: keypoint index -> provisional landmark, and a coarse
    // pixel grid over the observed keypoints for window lookups.
    struct KeyframeIndex {
        std::unordered_map<std::uint32_t, int> landmark_of_keypoint;
        std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> grid;  // cell -> keypoints
    };
    auto cell_key = [](int cx, int cy) {
        return (std::uint64_t(std::uint32_t(cx)) << 32) | std::uint32_t(cy);
    };
    std::vector<KeyframeIndex> index(map.keyframes.size());
    for (int li = 0; li < n; ++li)
        for (const auto& obs : map.landmarks[li].observations)
            index[obs.landmark_id].landmark_of_keypoint[obs.keypoint_index] = li;
    for (std::size_t k = 0; k < map.keyframes.size(); ++k)
        for (const auto& [kp_idx, li] : index[k].landmark_of_keypoint) {
            const auto& pos = map.keyframes[k].features.keypoints[kp_idx].position;
            index[k].grid[cell_key(int(std::floor(pos.u / 2.0)), int(std::floor(pos.v / 2.0)))]
                .push_back(kp_idx);
        }

    UnionFind uf(n);
    const double window = 1.5;  // Chebyshev radius of the 3x3 pixel window
    for (int li = 0; li < n; ++li) {
        const Landmark& lm = map.landmarks[li];
        const std::uint32_t owner = lm.observations.front().landmark_id;
        for (std::size_t k = 0; k < map.keyframes.size(); ++k) {
            if (std::uint32_t(k) == owner) continue;
            const MapKeyframe& kf = map.keyframes[k];
            const auto proj = project(lm.position, kf.pose.inverse(), kf.intrinsics);
            if (!proj) continue;
            const auto& [pix, z] = *proj;
            const int cx0 = int(std::floor((pix.u - window) / 2.0));
            const int cx1 = int(std::floor((pix.u + window) / 2.0));
            const int cy0 = int(std::floor((pix.v - window) / 2.0));
            const int cy1 = int(std::floor((pix.v + window) / 2.0));
            for (int cy = cy0; cy <= cy1; ++cy)
                for (int cx = cx0; cx <= cx1; ++cx) {
                    const auto it = index[k].grid.find(cell_key(cx, cy));
                    if (it == index[k].grid.end()) continue;
                    for (std::uint32_t kp_idx : it->second) {
                        const auto& kp = kf.features.keypoints[kp_idx].position;
                        if (std::abs(kp.u - pix.u) > window || std::abs(kp.v - pix.v) > window)
                            continue;
                        const int other = index[k].landmark_of_keypoint.at(kp_idx);
                        if (hamming_distance(lm.descriptor, map.landmarks[other].descriptor) >
                            config.merge_max_hamming)
                            continue;
                        // Depth agreement in the target keyframe, within the
                        // renderer's depth band at the nearer depth.
                        const Vec3 other_cam =
                            kf.pose.inverse().apply(map.landmarks[other].position);
                        const double zo = other_cam.z();
                        if (std::abs(z - zo) > config.render.depth_band(std::min(z, zo)))
                            continue;
                        uf.unite(li, other);
                    }
                }
        }
    }

    // Collapse components: mean position, medoid descriptor, merged
    // observations. Component order follows the smallest member id.
    std::map<int, std::vector<int>> components;
    for (int li = 0; li < n; ++li) components[uf.find(li)].push_back(li);

    std::vector<Landmark> merged;
    merged.reserve(components.size());
    std::vector<std::uint32_t> new_id(n, 0);
    for (const auto& [root, members] : components) {
        Landmark lm;
        lm.id = std::uint32_t(merged.size());
        Vec3 sum = Vec3::Zero();
        for (int m : members) {
            sum += map.landmarks[m].position;
            for (const auto& obs : map.landmarks[m].observations) lm.observations.push_back(obs);
            new_id[m] = lm.id;
        }
        lm.position = sum / double(members.size());
        int best = members.front();
        long best_cost = std::numeric_limits<long>::max();
        for (int a : members) {
            long cost = 0;
            for (int b : members)
                cost += hamming_distance(map.landmarks[a].descriptor, map.landmarks[b].descriptor);
            if (cost < best_cost) {
                best_cost = cost;
                best = a;
            }
        }
        lm.descriptor = map.landmarks[best].descriptor;
        std::sort(lm.observations.begin(), lm.observations.end(),
                  [](const Observation& a, const Observation& b) {
                      return a.landmark_id != b.landmark_id ? a.landmark_id < b.landmark_id
                                                           : a.keypoint_index < b.keypoint_index;
                  });
        merged.push_back(std::move(lm));
    }
    for (auto& kf : map.keyframes)
        for (auto& obs : kf.observations) obs.landmark_id = new_id[obs.landmark_id];
    map.landmarks = std::move(merged);
}

void prune_landmarks(SlamMap& map) {
    std::vector<std::uint32_t> new_id(map.landmarks.size(), UINT32_MAX);
    std::vector<Landmark> kept;
    for (const auto& lm : map.landmarks) {
        std::set<std::uint32_t> keyframes;
        for (const auto& obs : lm.observations) keyframes.insert(obs.landmark_id);
        if (keyframes.size() < 2) continue;
        new_id[lm.id] = std::uint32_t(kept.size());
        kept.push_back(lm);
        kept.back().id = new_id[lm.id];
    }
    for (auto& kf : map.keyframes) {
        std::vector<Observation> obs;
        for (const auto& o : kf.observations)
            if (new_id[o.landmark_id] != UINT32_MAX)
                obs.push_back({new_id[o.landmark_id], o.keypoint_index});
        kf.observations = std::move(obs);
    }
    map.landmarks = std::move(kept);
}

namespace {

// Guided second pass: with a coarse pose in hand, project every landmark
// into the frame and pair it with the best nearby query keypoint (window +
// Hamming gate). This recovers far more inliers than descriptor-only
// matching and tightens the final pose.
std::optional<PoseEstimate> guided_refine(const FeatureSet& query, const Intrinsics& K_cam,
                                          const SlamMap& map, const RigidPose& coarse,
                                          const PipelineConfig& config, double window) {
    // The search window must be much wider than the RANSAC inlier threshold,
    // otherwise every pairing induced by the seed pose lies within the
    // threshold and the seed confirms itself regardless of correctness.
    const double kWindow = window;
    const RigidPose view = coarse.inverse();

    const double cell = 2.0 * kWindow;
    std::unordered_map<std::uint64_t, std::vector<int>> grid;
    auto cell_key = [](int cx, int cy) {
        return (std::uint64_t(std::uint32_t(cx)) << 32) | std::uint32_t(cy);
    };
    for (int i = 0; i < int(query.size()); ++i) {
        const auto& p = query.keypoints[i].position;
        grid[cell_key(int(std::floor(p.u / cell)), int(std::floor(p.v / cell)))].push_back(i);
    }

    // best landmark per query keypoint: (hamming, landmark id)
    std::vector<std::pair<int, int>> best(query.size(), {config.merge_max_hamming + 1, -1});
    for (const auto& lm : map.landmarks) {
        const auto proj = project(lm.position, view, K_cam);
        if (!proj) continue;
        // Descriptors drift with viewpoint, and matching against the merged
        // medoid (whose source keyframe may face the landmark from a very
        // different direction) biases the matched pixel by a fraction of a
        // pixel — enough to bend the pose at room scale. Gate against the
        // observation whose source keyframe saw the landmark along the ray
        // closest to ours instead.
        const Vec3 qray = (lm.position - coarse.translation).normalized();
        const Descriptor* desc = &lm.descriptor;
        double best_dot = -2.0;
        for (const auto& obs : lm.observations) {
            const auto& kf = map.keyframes[obs.landmark_id];
            const double dot = qray.dot((lm.position - kf.pose.translation).normalized());
            if (dot > best_dot) {
                best_dot = dot;
                desc = &kf.features.descriptors[obs.keypoint_index];
            }
        }
        const auto& pix = proj->first;
        const int cx0 = int(std::floor((pix.u - kWindow) / cell));
        const int cx1 = int(std::floor((pix.u + kWindow) / cell));
        const int cy0 = int(std::floor((pix.v - kWindow) / cell));
        const int cy1 = int(std::floor((pix.v + kWindow) / cell));
        for (int cy = cy0; cy <= cy1; ++cy)
            for (int cx = cx0; cx <= cx1; ++cx) {
                const auto it = grid.find(cell_key(cx, cy));
                if (it == grid.end()) continue;
                for (int qi : it->second) {
                    const auto& qp = query.keypoints[qi].position;
                    if (std::abs(qp.u - pix.u) > kWindow || std::abs(qp.v - pix.v) > kWindow)
                        continue;
                    const int d = hamming_distance(query.descriptors[qi], *desc);
                    if (d < best[qi].first) best[qi] = {d, int(lm.id)};
                }
            }
    }

    std::vector<Correspondence2D3D> corrs;
    for (int qi = 0; qi < int(query.size()); ++qi)
        if (best[qi].second >= 0)
            corrs.push_back(
                {query.keypoints[qi].position, map.landmarks[best[qi].second].position});
    return solve_pnp_ransac(corrs, K_cam, config.ransac);
}

// Two guided passes with a shrinking window: the first recovers inliers
// around the descriptor-anchored solve, the second re-matches with fewer
// spurious candidates once the pose has tightened.
PoseEstimate refine_estimate(const FeatureSet& query, const Intrinsics& K_cam, const SlamMap& map,
                             const PoseEstimate& est, const PipelineConfig& config) {
    PoseEstimate out = est;
    if (auto r = guided_refine(query, K_cam, map, out.pose, config, 16.0)) out = *r;
    // Later passes tighten both the window and the inlier threshold to shed
    // marginal pairs; keypoints localize to a fraction of a pixel, so the
    // final gate can sit at one pixel.
    PipelineConfig tight = config;
    tight.ransac.reproj_threshold = std::min(config.ransac.reproj_threshold, 1.5);
    if (auto r = guided_refine(query, K_cam, map, out.pose, tight, 8.0)) out = *r;
    tight.ransac.reproj_threshold = std::min(config.ransac.reproj_threshold, 1.0);
    if (auto r = guided_refine(query, K_cam, map, out.pose, tight, 4.0)) out = *r;
    return out;
}

std::optional<PoseEstimate> solve_against_landmarks(const FeatureSet& query,
                                                    const std::vector<Descriptor>& descs,
                                                    const std::vector<Vec3>& positions,
                                                    const Intrinsics& K_cam,
                                                    const PipelineConfig& config) {
    const auto matches = match_descriptors(query.descriptors, descs, config.features);
    if (int(matches.size()) < config.ransac.min_inliers) return std::nullopt;
    std::vector<Correspondence2D3D> corrs;
    corrs.reserve(matches.size());
    for (const auto& m : matches)
        corrs.push_back({query.keypoints[m.index_a].position, positions[m.index_b]});
    return solve_pnp_ransac(corrs, K_cam, config.ransac);
}

}  // namespace

std::optional<PoseEstimate> localize_frame(const ImageRgb& image, const Intrinsics& K_cam,
                                           const SlamMap& map,
                                           const std::optional<RigidPose>& prior,
                                           const PipelineConfig& config) {
    if (map.landmarks.empty()) throw std::runtime_error("localize_frame: empty map");
    const FeatureSet query = detect_and_describe(image, config.features);

    if (prior) {
        // The prior is only used to select candidate keyframes, never as a
        // matching seed: seeding the guided pass from the previous estimate
        // lets small pose errors compound frame over frame.
        // Unique landmarks observed by the nearest keyframes to the prior.
        std::vector<std::uint32_t> order(map.keyframes.size());
        std::iota(order.begin(), order.end(), 0);
        // Pose distance mixes translation with viewing-direction angle (one
        // meter per radian) so the selected keyframes face the same way as
        // the prior, not just stand near it.
        auto pose_distance = [&](const RigidPose& p) {
            return (p.translation - prior->translation).norm() +
                   rotation_angle(p.rotation, prior->rotation);
        };
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            return pose_distance(map.keyframes[a].pose) < pose_distance(map.keyframes[b].pose);
        });
        std::set<std::uint32_t> ids;
        const std::size_t take =
            std::min<std::size_t>(std::max(1, config.nearest_keyframes), order.size());
        std::vector<Descriptor> descs;
        std::vector<Vec3> positions;
        // Use each keyframe's native descriptors, not the merged medoids:
        // a medoid's source view can face the landmark from far off-axis and
        // its matches localize with a systematic sub-pixel bias. Keep one
        // entry per landmark (nearest keyframe wins) so the matcher's ratio
        // test is not defeated by near-duplicate descriptors.
        for (std::size_t i = 0; i < take; ++i)
            for (const auto& obs : map.keyframes[order[i]].observations)
                if (ids.insert(obs.landmark_id).second) {
                    descs.push_back(
                        map.keyframes[order[i]].features.descriptors[obs.keypoint_index]);
                    positions.push_back(map.landmarks[obs.landmark_id].position);
                }
        if (auto est = solve_against_landmarks(query, descs, positions, K_cam, config))
            return refine_estimate(query, K_cam, map, *est, config);
        // Fall through to the global search when the prior neighborhood fails.
    }

    // Global search: rank keyframes by match count against their landmark
    // descriptors, then solve on the best candidates.
    struct Candidate {
        std::uint32_t keyframe;
        std::vector<Descriptor> descs;
        std::vector<Vec3> positions;
        std::size_t matches = 0;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(map.keyframes.size());
    for (const auto& kf : map.keyframes) {
        Candidate c;
        c.keyframe = kf.id;
        for (const auto& obs : kf.observations) {
            // Native keyframe descriptors, same rationale as the prior path.
            c.descs.push_back(kf.features.descriptors[obs.keypoint_index]);
            c.positions.push_back(map.landmarks[obs.landmark_id].position);
        }
        c.matches = match_descriptors(query.descriptors, c.descs, config.features).size();
        candidates.push_back(std::move(c));
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.matches > b.matches; });
    // Keypoints matched against a keyframe rotated tens of degrees off the
    // query axis localize several pixels away from where the query sees the
    // same structure, so the coarse solve runs with a relaxed gate and a
    // wide inlier threshold. The guided refinement re-matches under the full
    // configured gate; a candidate is only accepted once that gate holds.
    PipelineConfig coarse = config;
    coarse.ransac.min_inliers = std::max(6, config.ransac.min_inliers / 2);
    coarse.ransac.max_iterations = std::max(4000, config.ransac.max_iterations);
    coarse.ransac.reproj_threshold = std::max(config.ransac.reproj_threshold, 8.0);
    int attempts = 0;
    for (const auto& c : candidates) {
        if (int(c.matches) < coarse.ransac.min_inliers || ++attempts > 10) break;
        if (auto est = solve_against_landmarks(query, c.descs, c.positions, K_cam, coarse)) {
            const PoseEstimate refined = refine_estimate(query, K_cam, map, *est, config);
            if (int(refined.inlier_indices.size()) >= config.ransac.min_inliers) return refined;
        }
    }
    return std::nullopt;
}

namespace {

constexpr std::uint32_t kMapVersion = 1;

void write_pose(std::ofstream& out, const RigidPose& pose) {
    Eigen::Quaterniond q(pose.rotation);
    q.normalize();
    if (q.w() < 0) q.coeffs() *= -1.0;
    for (int i = 0; i < 3; ++i) detail::write_pod(out, double(pose.translation(i)));
    detail::write_pod(out, q.x());
    detail::write_pod(out, q.y());
    detail::write_pod(out, q.z());
    detail::write_pod(out, q.w());
}

RigidPose read_pose(std::ifstream& in) {
    RigidPose pose;
    for (int i = 0; i < 3; ++i) pose.translation(i) = detail::read_pod<double>(in);
    const double qx = detail::read_pod<double>(in);
    const double qy = detail::read_pod<double>(in);
    const double qz = detail::read_pod<double>(in);
    const double qw = detail::read_pod<double>(in);
    pose.rotation = Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix();
    return pose;
}

void write_observations(std::ofstream& out, const std::vector<Observation>& obs) {
    detail::write_pod(out, std::uint32_t(obs.size()));
    for (const auto& o : obs) {
        detail::write_pod(out, o.landmark_id);
        detail::write_pod(out, o.keypoint_index);
    }
}

std::vector<Observation> read_observations(std::ifstream& in) {
    std::vector<Observation> obs(detail::read_pod<std::uint32_t>(in));
    for (auto& o : obs) {
        o.landmark_id = detail::read_pod<std::uint32_t>(in);
        o.keypoint_index = detail::read_pod<std::uint32_t>(in);
    }
    return obs;
}

}  // namespace

void save_map(const SlamMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write map: " + path);
    detail::write_magic(out, "PCLOCMAP1");
    detail::write_pod(out, kMapVersion);
    detail::write_pod(out, map.cloud_fingerprint);
    detail::write_pod(out, map.config_hash);

    detail::write_pod(out, std::uint32_t(map.keyframes.size()));
    for (const auto& kf : map.keyframes) {
        detail::write_pod(out, kf.id);
        write_pose(out, kf.pose);
        detail::write_pod(out, kf.intrinsics.fx);
        detail::write_pod(out, kf.intrinsics.fy);
        detail::write_pod(out, kf.intrinsics.cx);
        detail::write_pod(out, kf.intrinsics.cy);
        detail::write_pod(out, std::int32_t(kf.intrinsics.width));
        detail::write_pod(out, std::int32_t(kf.intrinsics.height));
        detail::write_pod(out, std::uint32_t(kf.features.size()));
        for (const auto& kp : kf.features.keypoints) {
            detail::write_pod(out, float(kp.position.u));
            detail::write_pod(out, float(kp.position.v));
            detail::write_pod(out, kp.response);
            detail::write_pod(out, kp.orientation);
            detail::write_pod(out, std::int32_t(kp.octave));
        }
        for (const auto& d : kf.features.descriptors)
            out.write(reinterpret_cast<const char*>(d.bits.data()), 32);
        write_observations(out, kf.observations);
    }

    detail::write_pod(out, std::uint32_t(map.landmarks.size()));
    for (const auto& lm : map.landmarks) {
        detail::write_pod(out, lm.id);
        for (int i = 0; i < 3; ++i) detail::write_pod(out, float(lm.position(i)));
        out.write(reinterpret_cast<const char*>(lm.descriptor.bits.data()), 32);
        write_observations(out, lm.observations);
    }
}

SlamMap load_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open map: " + path);
    detail::expect_magic(in, "PCLOCMAP1");
    if (detail::read_pod<std::uint32_t>(in) != kMapVersion)
        throw std::runtime_error("unsupported map version");
    SlamMap map;
    map.cloud_fingerprint = detail::read_pod<std::uint64_t>(in);
    map.config_hash = detail::read_pod<std::uint64_t>(in);

    map.keyframes.resize(detail::read_pod<std::uint32_t>(in));
    for (auto& kf : map.keyframes) {
        kf.id = detail::read_pod<std::uint32_t>(in);
        kf.pose = read_pose(in);
        kf.intrinsics.fx = detail::read_pod<double>(in);
        kf.intrinsics.fy = detail::read_pod<double>(in);
        kf.intrinsics.cx = detail::read_pod<double>(in);
        kf.intrinsics.cy = detail::read_pod<double>(in);
        kf.intrinsics.width = detail::read_pod<std::int32_t>(in);
        kf.intrinsics.height = detail::read_pod<std::int32_t>(in);
        const auto count = detail::read_pod<std::uint32_t>(in);
        kf.features.keypoints.resize(count);
        for (auto& kp : kf.features.keypoints) {
            kp.position.u = detail::read_pod<float>(in);
            kp.position.v = detail::read_pod<float>(in);
            kp.response = detail::read_pod<float>(in);
            kp.orientation = detail::read_pod<float>(in);
            kp.octave = detail::read_pod<std::int32_t>(in);
        }
        kf.features.descriptors.resize(count);
        for (auto& d : kf.features.descriptors)
            if (!in.read(reinterpret_cast<char*>(d.bits.data()), 32))
                throw std::runtime_error("truncated map file");
        kf.observations = read_observations(in);
    }

    map.landmarks.resize(detail::read_pod<std::uint32_t>(in));
    for (auto& lm : map.landmarks) {
        lm.id = detail::read_pod<std::uint32_t>(in);
        float xyz[3];
        if (!in.read(reinterpret_cast<char*>(xyz), 12))
            throw std::runtime_error("truncated map file");
        lm.position = Vec3(xyz[0], xyz[1], xyz[2]);
        if (!in.read(reinterpret_cast<char*>(lm.descriptor.bits.data()), 32))
            throw std::runtime_error("truncated map file");
        lm.observations = read_observations(in);
    }
    return map;
}

void check_map_invariants(const SlamMap& map) {
    auto fail = [](const std::string& what) {
        throw std::runtime_error("map invariant violated: " + what);
    };
    for (std::size_t k = 0; k < map.keyframes.size(); ++k)
        if (map.keyframes[k].id != k) fail("keyframe ids not contiguous");
    for (std::size_t l = 0; l < map.landmarks.size(); ++l)
        if (map.landmarks[l].id != l) fail("landmark ids not contiguous");

    for (const auto& kf : map.keyframes)
        for (const auto& obs : kf.observations) {
            if (obs.landmark_id >= map.landmarks.size()) fail("keyframe references bad landmark");
            if (obs.keypoint_index >= kf.features.size()) fail("observation keypoint out of range");
            const auto& back = map.landmarks[obs.landmark_id].observations;
            const bool found = std::any_of(back.begin(), back.end(), [&](const Observation& o) {
                return o.landmark_id == kf.id && o.keypoint_index == obs.keypoint_index;
            });
            if (!found) fail("keyframe observation missing from landmark");
        }

    for (const auto& lm : map.landmarks) {
        std::set<std::uint32_t> keyframes;
        for (const auto& obs : lm.observations) {
            if (obs.landmark_id >= map.keyframes.size()) fail("landmark references bad keyframe");
            const auto& kf = map.keyframes[obs.landmark_id];
            if (obs.keypoint_index >= kf.features.size()) fail("landmark keypoint out of range");
            const bool found = std::any_of(
                kf.observations.begin(), kf.observations.end(), [&](const Observation& o) {
                    return o.landmark_id == lm.id && o.keypoint_index == obs.keypoint_index;
                });
            if (!found) fail("landmark observation missing from keyframe");
            keyframes.insert(obs.landmark_id);
        }
        if (keyframes.size() < 2) fail("landmark observed by fewer than two keyframes");
        if (!lm.position.allFinite()) fail("non-finite landmark position");
    }
}

}  // namespace pcloc
