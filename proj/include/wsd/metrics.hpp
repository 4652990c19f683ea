#pragma once

#include <string>
#include <vector>

#include "wsd/fit.hpp"
#include "wsd/synthetic.hpp"
#include "wsd/unet.hpp"

namespace wsd {

// Fixed (pose, camera) grid rendered for every avatar in a comparison; the
// same probes must be used for both sets.
struct ProbeConfig {
    int pose_count = 4;
    int camera_count = 4;
    int resolution = 64;
    uint64_t pose_seed = 11;
    DatasetConfig scene;  // template geometry + view extent + background
    UNetConfig unet;
};

struct ProbeSet {
    ProbeConfig cfg;
    std::vector<Pose> poses;
    std::vector<Camera> cameras;
    Template tpl;
    UVAnchorMap anchors;
    // cached per-pose forward inputs and skinning, shared across avatars
    std::vector<Tensor> inputs;
    std::vector<std::shared_ptr<const SkinningContext>> skinning;
    uint64_t hash = 0;
};

ProbeSet make_probes(const ProbeConfig& cfg);

// Probe renders in pose-major, camera-minor order; rgb [1,3,H,W] each.
std::vector<Tensor> render_probes(const WeightRecord& weights, const ProbeSet& probes);

enum class DistanceMetric { kNegPsnr, kPerceptualProxy };

// Self-distance value of each metric, used both for reporting caps and for
// duplicate exclusion in the 1-NN classifier.
double metric_self_distance(DistanceMetric metric);

double avatar_distance(const std::vector<Tensor>& imgs_a, const std::vector<Tensor>& imgs_b,
                       DistanceMetric metric);
double avatar_distance(const WeightRecord& a, const WeightRecord& b, const ProbeSet& probes,
                       DistanceMetric metric);

using DistanceMatrix = std::vector<std::vector<double>>;  // [generated][reference]

DistanceMatrix cross_distances(const std::vector<std::vector<Tensor>>& gen_imgs,
                               const std::vector<std::vector<Tensor>>& ref_imgs,
                               DistanceMetric metric);
DistanceMatrix self_distances(const std::vector<std::vector<Tensor>>& imgs, DistanceMetric metric);

// MMD(Sg,Sr) = mean over reference of the best generated match.
double mmd(const DistanceMatrix& cross);
// Fraction (percent) of reference elements that are some generated element's
// argmin match; ties go to the lowest reference index.
double cov(const DistanceMatrix& cross);
// Leave-one-out 1-NN two-sample classification accuracy (percent) over the
// union, enumerated generated-then-reference. The positional self and any
// candidate at exactly the metric self-distance (an indistinguishable
// duplicate) are excluded; remaining ties go to the lowest enumeration index.
double one_nna(const DistanceMatrix& cross, const DistanceMatrix& within_g,
               const DistanceMatrix& within_r, double self_distance);

struct MetricReport {
    double mmd_psnr = 0;        // dB, higher is better (negated internal distance)
    double mmd_proxy = 0;
    double cov_percent = 0;
    double one_nna_percent = 0;
    int n_generated = 0;
    int n_reference = 0;
    uint64_t probe_hash = 0;
    uint64_t seed = 0;
};

// Loads *.wsdw records from both directories (unreadable files are skipped
// with a warning; fewer than 2 usable records per set is an error), renders
// probes, computes all metrics.
MetricReport evaluate(const std::string& generated_dir, const std::string& reference_dir,
                      const ProbeSet& probes, uint64_t seed);

void write_report(const MetricReport& report, const std::string& path);

}  // namespace wsd
