#include "wsd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "wsd/image.hpp"
#include "wsd/losses.hpp"

namespace fs = std::filesystem;

namespace wsd {

ProbeSet make_probes(const ProbeConfig& cfg) {
    ProbeSet set;
    set.cfg = cfg;
    set.poses = sample_pose_sequence(cfg.pose_seed, cfg.pose_count, cfg.scene.joint_count);
    DatasetConfig cam_cfg = cfg.scene;
    cam_cfg.cameras = cfg.camera_count;
    cam_cfg.resolution = cfg.resolution;
    for (int c = 0; c < cfg.camera_count; ++c) set.cameras.push_back(dataset_camera(cam_cfg, c));

    set.tpl = build_template(cfg.scene.joint_count, cfg.scene.radial_segments,
                             cfg.scene.height_segments, cfg.scene.tube_radius);
    set.anchors = anchor_map(set.tpl, cfg.unet.uv_resolution);
    for (const Pose& pose : set.poses) {
        PoseMaps maps = pose_maps(set.tpl, pose, cfg.unet.uv_resolution, set.anchors);
        set.inputs.push_back(pose_maps_input(maps));
        set.skinning.push_back(
            std::make_shared<const SkinningContext>(build_skinning(set.tpl, set.anchors, pose)));
    }

    // FNV-1a over the probe geometry for report provenance
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* data, size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const Pose& pose : set.poses)
        for (const Vec3& aa : pose.joint_rotations) mix(&aa, sizeof(aa));
    for (const Camera& cam : set.cameras) {
        mix(cam.rotation.m, sizeof(cam.rotation.m));
        mix(&cam.translation, sizeof(cam.translation));
        mix(&cam.pixel_scale, sizeof(cam.pixel_scale));
    }
    int res = cfg.resolution;
    mix(&res, sizeof(res));
    set.hash = h;
    return set;
}

std::vector<Tensor> render_probes(const WeightRecord& weights, const ProbeSet& probes) {
    std::vector<Tensor> images;
    images.reserve(probes.poses.size() * probes.cameras.size());
    for (size_t p = 0; p < probes.poses.size(); ++p) {
        Tape tape;
        int input = tape.leaf(probes.inputs[p], false);
        UNetNodes nodes = unet_leaves(tape, weights, false);
        int raw = unet_forward(tape, nodes, input, probes.cfg.unet);
        DecodedNodes dec = decode_heads(tape, raw);
        int packed = gaussians_to_world_node(tape, dec.offset, dec.scale, dec.quaternion,
                                             dec.opacity, dec.sh, probes.skinning[p]);
        for (const Camera& cam : probes.cameras) {
            int img = rasterize_node(tape, packed, cam, probes.cfg.scene.background);
            const Tensor& iv = tape.val(img);
            Tensor rgb = Tensor::zeros({1, 3, cam.height, cam.width});
            std::copy(iv.data.begin(), iv.data.begin() + rgb.numel(), rgb.data.begin());
            images.push_back(std::move(rgb));
        }
    }
    return images;
}

double metric_self_distance(DistanceMetric metric) {
    return metric == DistanceMetric::kNegPsnr ? -100.0 : 0.0;
}

double avatar_distance(const std::vector<Tensor>& imgs_a, const std::vector<Tensor>& imgs_b,
                       DistanceMetric metric) {
    check_shape(imgs_a.size() == imgs_b.size() && !imgs_a.empty(),
                "avatar_distance: probe image count mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < imgs_a.size(); ++i) {
        if (metric == DistanceMetric::kNegPsnr)
            acc += -psnr(imgs_a[i], imgs_b[i]);
        else
            acc += perceptual_proxy().distance(imgs_a[i], imgs_b[i]);
    }
    return acc / static_cast<double>(imgs_a.size());
}

double avatar_distance(const WeightRecord& a, const WeightRecord& b, const ProbeSet& probes,
                       DistanceMetric metric) {
    return avatar_distance(render_probes(a, probes), render_probes(b, probes), metric);
}

DistanceMatrix cross_distances(const std::vector<std::vector<Tensor>>& gen_imgs,
                               const std::vector<std::vector<Tensor>>& ref_imgs,
                               DistanceMetric metric) {
    DistanceMatrix m(gen_imgs.size(), std::vector<double>(ref_imgs.size(), 0.0));
    for (size_t i = 0; i < gen_imgs.size(); ++i)
        for (size_t j = 0; j < ref_imgs.size(); ++j)
            m[i][j] = avatar_distance(gen_imgs[i], ref_imgs[j], metric);
    return m;
}

DistanceMatrix self_distances(const std::vector<std::vector<Tensor>>& imgs, DistanceMetric metric) {
    DistanceMatrix m(imgs.size(), std::vector<double>(imgs.size(), metric_self_distance(metric)));
    for (size_t i = 0; i < imgs.size(); ++i)
        for (size_t j = i + 1; j < imgs.size(); ++j) {
            double d = avatar_distance(imgs[i], imgs[j], metric);
            m[i][j] = d;
            m[j][i] = d;
        }
    return m;
}

double mmd(const DistanceMatrix& cross) {
    check_shape(!cross.empty() && !cross[0].empty(), "mmd: empty distance matrix");
    const size_t ng = cross.size(), nr = cross[0].size();
    double acc = 0.0;
    for (size_t j = 0; j < nr; ++j) {
        double best = cross[0][j];
        for (size_t i = 1; i < ng; ++i) best = std::min(best, cross[i][j]);
        acc += best;
    }
    return acc / static_cast<double>(nr);
}

double cov(const DistanceMatrix& cross) {
    check_shape(!cross.empty() && !cross[0].empty(), "cov: empty distance matrix");
    const size_t ng = cross.size(), nr = cross[0].size();
    std::vector<bool> covered(nr, false);
    for (size_t i = 0; i < ng; ++i) {
        size_t arg = 0;
        for (size_t j = 1; j < nr; ++j)
            if (cross[i][j] < cross[i][arg]) arg = j;
        covered[arg] = true;
    }
    int count = 0;
    for (bool c : covered) count += c ? 1 : 0;
    return 100.0 * static_cast<double>(count) / static_cast<double>(nr);
}

double one_nna(const DistanceMatrix& cross, const DistanceMatrix& within_g,
               const DistanceMatrix& within_r, double self_distance) {
    const size_t ng = cross.size();
    check_shape(ng > 0 && !cross[0].empty(), "one_nna: empty distance matrix");
    const size_t nr = cross[0].size();
    check_shape(within_g.size() == ng && within_r.size() == nr,
                "one_nna: within-set matrix sizes do not match the cross matrix");

    // distance of union element a to union element b; first ng indices are
    // the generated set
    auto dist = [&](size_t a, size_t b) {
        bool ag = a < ng, bg = b < ng;
        if (ag && bg) return within_g[a][b];
        if (!ag && !bg) return within_r[a - ng][b - ng];
        if (ag) return cross[a][b - ng];
        return cross[b][a - ng];
    };

    const size_t total = ng + nr;
    int correct = 0;
    for (size_t a = 0; a < total; ++a) {
        size_t best = total;
        double best_d = 0.0;
        for (size_t b = 0; b < total; ++b) {
            if (b == a) continue;
            double d = dist(a, b);
            if (d == self_distance) continue;  // indistinguishable duplicate of a
            if (best == total || d < best_d) {
                best = b;
                best_d = d;
            }
        }
        check_shape(best != total, "one_nna: element has no valid neighbor");
        bool same_set = (a < ng) == (best < ng);
        correct += same_set ? 1 : 0;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

std::vector<WeightRecord> load_record_dir(const std::string& dir) {
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".wsdw")
            paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());
    std::vector<WeightRecord> records;
    for (const auto& p : paths) {
        try {
            records.push_back(load_record(p.string()));
        } catch (const Error& e) {
            std::cerr << "warning: skipping unreadable record " << p << ": " << e.what() << "\n";
        }
    }
    if (records.size() < 2)
        throw Error("evaluate: need at least 2 readable records in " + dir + ", got " +
                    std::to_string(records.size()));
    return records;
}

}  // namespace

MetricReport evaluate(const std::string& generated_dir, const std::string& reference_dir,
                      const ProbeSet& probes, uint64_t seed) {
    std::vector<WeightRecord> gen = load_record_dir(generated_dir);
    std::vector<WeightRecord> ref = load_record_dir(reference_dir);

    std::vector<std::vector<Tensor>> gen_imgs, ref_imgs;
    for (const auto& r : gen) gen_imgs.push_back(render_probes(r, probes));
    for (const auto& r : ref) ref_imgs.push_back(render_probes(r, probes));

    DistanceMatrix cross_psnr = cross_distances(gen_imgs, ref_imgs, DistanceMetric::kNegPsnr);
    DistanceMatrix cross_proxy = cross_distances(gen_imgs, ref_imgs, DistanceMetric::kPerceptualProxy);
    DistanceMatrix gg = self_distances(gen_imgs, DistanceMetric::kNegPsnr);
    DistanceMatrix rr = self_distances(ref_imgs, DistanceMetric::kNegPsnr);

    MetricReport report;
    report.mmd_psnr = -mmd(cross_psnr);  // distance is -PSNR; report in dB, higher better
    report.mmd_proxy = mmd(cross_proxy);
    report.cov_percent = cov(cross_psnr);
    report.one_nna_percent =
        one_nna(cross_psnr, gg, rr, metric_self_distance(DistanceMetric::kNegPsnr));
    report.n_generated = static_cast<int>(gen.size());
    report.n_reference = static_cast<int>(ref.size());
    report.probe_hash = probes.hash;
    report.seed = seed;
    return report;
}

void write_report(const MetricReport& report, const std::string& path) {
    nlohmann::json j{{"mmd_psnr", report.mmd_psnr},
                     {"mmd_proxy", report.mmd_proxy},
                     {"cov_percent", report.cov_percent},
                     {"one_nna_percent", report.one_nna_percent},
                     {"n_generated", report.n_generated},
                     {"n_reference", report.n_reference},
                     {"probe_hash", report.probe_hash},
                     {"seed", report.seed}};
    std::ofstream out(path);
    if (!out) throw Error("evaluate: cannot write report " + path);
    out << j.dump(2) << "\n";
}

}  // namespace wsd
