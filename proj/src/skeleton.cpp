#include "wsd/skeleton.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace wsd {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

std::array<std::array<float, 2>, 3> Template::triangle_uv(int tri) const {
    std::array<std::array<float, 2>, 3> c;
    float umin = 1.0f, umax = 0.0f;
    for (int i = 0; i < 3; ++i) {
        c[static_cast<size_t>(i)] = uv[static_cast<size_t>(triangles[static_cast<size_t>(tri)][static_cast<size_t>(i)])];
        umin = std::min(umin, c[static_cast<size_t>(i)][0]);
        umax = std::max(umax, c[static_cast<size_t>(i)][0]);
    }
    if (cylindrical_seam && umax - umin > 0.5f) {  // crosses the seam; lift the wrapped corners
        for (auto& p : c)
            if (p[0] < 0.5f) p[0] += 1.0f;
    }
    return c;
}

Template build_template(int joint_count, int radial_segments, int height_segments, float radius) {
    if (joint_count < 2) throw Error("build_template: joint_count must be >= 2");
    if (radial_segments < 3 || height_segments < 1 || radius <= 0.0f)
        throw Error("build_template: degenerate tube parameters");

    Template tpl;
    tpl.joint_count = joint_count;
    tpl.cylindrical_seam = true;
    const float height = kBoneLength * static_cast<float>(joint_count - 1);
    const int rings = height_segments + 1;

    for (int r = 0; r < rings; ++r) {
        float v = static_cast<float>(r) / static_cast<float>(height_segments);
        float y = v * height;
        for (int c = 0; c < radial_segments; ++c) {
            float u = static_cast<float>(c) / static_cast<float>(radial_segments);
            float ang = static_cast<float>(2.0 * kPi * u);
            tpl.vertices.push_back({radius * std::cos(ang), y, radius * std::sin(ang)});
            tpl.uv.push_back({u, v});
        }
    }
    auto ring_vertex = [&](int r, int c) { return r * radial_segments + (c % radial_segments); };

    for (int r = 0; r < height_segments; ++r) {
        for (int c = 0; c < radial_segments; ++c) {
            int a = ring_vertex(r, c), b = ring_vertex(r, c + 1);
            int d = ring_vertex(r + 1, c), e = ring_vertex(r + 1, c + 1);
            tpl.triangles.push_back({a, d, b});  // outward winding
            tpl.triangles.push_back({b, d, e});
        }
    }

    // cap centers; their UV is degenerate on purpose so no texel anchors there
    int bottom = static_cast<int>(tpl.vertices.size());
    tpl.vertices.push_back({0, 0, 0});
    tpl.uv.push_back({0.5f, 0.0f});
    int top = static_cast<int>(tpl.vertices.size());
    tpl.vertices.push_back({0, height, 0});
    tpl.uv.push_back({0.5f, 1.0f});
    for (int c = 0; c < radial_segments; ++c) {
        tpl.triangles.push_back({bottom, ring_vertex(0, c), ring_vertex(0, c + 1)});
        tpl.triangles.push_back({top, ring_vertex(rings - 1, c + 1), ring_vertex(rings - 1, c)});
    }

    tpl.parent.resize(static_cast<size_t>(joint_count));
    tpl.joint_rest.resize(static_cast<size_t>(joint_count));
    for (int j = 0; j < joint_count; ++j) {
        tpl.parent[static_cast<size_t>(j)] = j - 1;
        tpl.joint_rest[static_cast<size_t>(j)] = {0, kBoneLength * static_cast<float>(j), 0};
    }

    // linear blend between the two joints bounding each vertex's height
    tpl.skin_weights.assign(tpl.vertices.size(), std::vector<float>(static_cast<size_t>(joint_count), 0.0f));
    for (size_t v = 0; v < tpl.vertices.size(); ++v) {
        float t = tpl.vertices[v].y / kBoneLength;
        int j0 = std::clamp(static_cast<int>(std::floor(t)), 0, joint_count - 2);
        float frac = std::clamp(t - static_cast<float>(j0), 0.0f, 1.0f);
        tpl.skin_weights[v][static_cast<size_t>(j0)] = 1.0f - frac;
        tpl.skin_weights[v][static_cast<size_t>(j0) + 1] = frac;
    }
    return tpl;
}

void validate_pose(const Pose& pose, int joint_count) {
    if (static_cast<int>(pose.joint_rotations.size()) != joint_count)
        throw Error("pose: expected " + std::to_string(joint_count) + " joints, got " +
                    std::to_string(pose.joint_rotations.size()));
    for (const Vec3& aa : pose.joint_rotations)
        if (aa.norm() > static_cast<float>(kPi) + 1e-5f)
            throw Error("pose: rotation magnitude exceeds pi");
}

std::vector<Transform> skinning_transforms(const Template& tpl, const Pose& pose) {
    validate_pose(pose, tpl.joint_count);
    std::vector<Transform> world(static_cast<size_t>(tpl.joint_count));
    for (int j = 0; j < tpl.joint_count; ++j) {
        Vec3 offset = j == 0 ? tpl.joint_rest[0] + pose.root_translation
                             : tpl.joint_rest[static_cast<size_t>(j)] - tpl.joint_rest[static_cast<size_t>(j) - 1];
        Transform local{rotation_from_axis_angle(pose.joint_rotations[static_cast<size_t>(j)]), offset};
        world[static_cast<size_t>(j)] = j == 0 ? local : world[static_cast<size_t>(j) - 1].then_after(local);
    }
    std::vector<Transform> skin(static_cast<size_t>(tpl.joint_count));
    for (int j = 0; j < tpl.joint_count; ++j) {
        const Transform& a = world[static_cast<size_t>(j)];
        const Vec3& rest = tpl.joint_rest[static_cast<size_t>(j)];
        skin[static_cast<size_t>(j)] = {a.rot, a.trans - a.rot * rest};
    }
    return skin;
}

std::vector<Quat> joint_world_quats(const Template& tpl, const Pose& pose) {
    std::vector<Quat> q(static_cast<size_t>(tpl.joint_count));
    for (int j = 0; j < tpl.joint_count; ++j) {
        Quat local = quat_from_axis_angle(pose.joint_rotations[static_cast<size_t>(j)]).normalized();
        q[static_cast<size_t>(j)] = j == 0 ? local : (q[static_cast<size_t>(j) - 1] * local).normalized();
    }
    return q;
}

std::vector<Vec3> lbs(const Template& tpl, const Pose& pose) {
    std::vector<Transform> skin = skinning_transforms(tpl, pose);
    std::vector<Vec3> out(tpl.vertices.size());
    for (size_t v = 0; v < tpl.vertices.size(); ++v) {
        Mat3 rot{};
        for (int i = 0; i < 9; ++i) rot.m[i] = 0;
        Vec3 trans{0, 0, 0};
        for (int j = 0; j < tpl.joint_count; ++j) {
            float w = tpl.skin_weights[v][static_cast<size_t>(j)];
            if (w == 0.0f) continue;
            for (int i = 0; i < 9; ++i) rot.m[i] += w * skin[static_cast<size_t>(j)].rot.m[i];
            trans = trans + skin[static_cast<size_t>(j)].trans * w;
        }
        out[v] = rot * tpl.vertices[v] + trans;
    }
    return out;
}

UVAnchorMap anchor_map(const Template& tpl, int resolution) {
    if (resolution < 4) throw Error("anchor_map: resolution must be >= 4");
    UVAnchorMap map;
    map.resolution = resolution;
    map.texels.assign(static_cast<size_t>(resolution) * resolution, {});

    struct TriUV {
        int tri;
        double ax, ay, bx, by, cx, cy, det;
    };
    std::vector<TriUV> tris;
    for (size_t t = 0; t < tpl.triangles.size(); ++t) {
        auto c = tpl.triangle_uv(static_cast<int>(t));
        double ax = c[0][0], ay = c[0][1], bx = c[1][0], by = c[1][1], cx = c[2][0], cy = c[2][1];
        double det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy);
        if (std::abs(det) < 1e-12) continue;  // degenerate in UV (caps)
        tris.push_back({static_cast<int>(t), ax, ay, bx, by, cx, cy, det});
    }

    for (int row = 0; row < resolution; ++row) {
        double v = (row + 0.5) / resolution;
        for (int col = 0; col < resolution; ++col) {
            double u = (col + 0.5) / resolution;
            UVAnchorMap::Texel& tx = map.texels[static_cast<size_t>(row) * resolution + col];
            for (const TriUV& t : tris) {
                double a = ((t.by - t.cy) * (u - t.cx) + (t.cx - t.bx) * (v - t.cy)) / t.det;
                double b = ((t.cy - t.ay) * (u - t.cx) + (t.ax - t.cx) * (v - t.cy)) / t.det;
                double c = 1.0 - a - b;
                if (a >= -1e-9 && b >= -1e-9 && c >= -1e-9) {
                    tx.triangle = t.tri;
                    tx.bary[0] = static_cast<float>(a);
                    tx.bary[1] = static_cast<float>(b);
                    tx.bary[2] = static_cast<float>(c);
                    tx.valid = true;
                    ++map.valid_count;
                    break;
                }
            }
        }
    }
    return map;
}

SkinningContext build_skinning(const Template& tpl, const UVAnchorMap& anchors, const Pose& pose) {
    std::vector<Transform> skin = skinning_transforms(tpl, pose);
    std::vector<Quat> jq = joint_world_quats(tpl, pose);
    const int J = tpl.joint_count;

    SkinningContext ctx;
    ctx.resolution = anchors.resolution;
    ctx.entries.reserve(static_cast<size_t>(anchors.valid_count));
    std::vector<float> w(static_cast<size_t>(J));
    for (size_t ti = 0; ti < anchors.texels.size(); ++ti) {
        const auto& tx = anchors.texels[ti];
        if (!tx.valid) continue;
        const auto& tri = tpl.triangles[static_cast<size_t>(tx.triangle)];

        SkinningContext::Entry e;
        e.texel = static_cast<int>(ti);
        e.anchor = {0, 0, 0};
        std::fill(w.begin(), w.end(), 0.0f);
        for (int k = 0; k < 3; ++k) {
            int vi = tri[static_cast<size_t>(k)];
            e.anchor = e.anchor + tpl.vertices[static_cast<size_t>(vi)] * tx.bary[k];
            for (int j = 0; j < J; ++j)
                w[static_cast<size_t>(j)] += tx.bary[k] * tpl.skin_weights[static_cast<size_t>(vi)][static_cast<size_t>(j)];
        }

        for (int i = 0; i < 9; ++i) e.rot.m[i] = 0;
        e.trans = {0, 0, 0};
        int ref = -1;
        for (int j = 0; j < J; ++j) {
            if (w[static_cast<size_t>(j)] == 0.0f) continue;
            if (ref < 0) ref = j;
            for (int i = 0; i < 9; ++i) e.rot.m[i] += w[static_cast<size_t>(j)] * skin[static_cast<size_t>(j)].rot.m[i];
            e.trans = e.trans + skin[static_cast<size_t>(j)].trans * w[static_cast<size_t>(j)];
        }

        // normalized linear quaternion blend, hemisphere-aligned to the first
        // contributing joint
        Quat acc{0, 0, 0, 0};
        const Quat& qr = jq[static_cast<size_t>(ref < 0 ? 0 : ref)];
        for (int j = 0; j < J; ++j) {
            float wj = w[static_cast<size_t>(j)];
            if (wj == 0.0f) continue;
            Quat qj = jq[static_cast<size_t>(j)];
            float dot = qj.w * qr.w + qj.x * qr.x + qj.y * qr.y + qj.z * qr.z;
            float s = dot < 0.0f ? -wj : wj;
            acc.w += s * qj.w;
            acc.x += s * qj.x;
            acc.y += s * qj.y;
            acc.z += s * qj.z;
        }
        e.bone_quat = acc.normalized();
        ctx.entries.push_back(e);
    }
    return ctx;
}

PoseMaps pose_maps(const Template& tpl, const Pose& pose, int resolution,
                   const UVAnchorMap& anchors) {
    if (anchors.resolution != resolution)
        throw Error("pose_maps: anchor map resolution mismatch");
    SkinningContext ctx = build_skinning(tpl, anchors, pose);

    // posed triangle normals from per-corner LBS
    std::vector<Vec3> posed = lbs(tpl, pose);
    std::vector<Vec3> tri_normal(tpl.triangles.size());
    for (size_t t = 0; t < tpl.triangles.size(); ++t) {
        const auto& tri = tpl.triangles[t];
        Vec3 a = posed[static_cast<size_t>(tri[0])], b = posed[static_cast<size_t>(tri[1])], c = posed[static_cast<size_t>(tri[2])];
        tri_normal[t] = (b - a).cross(c - a).normalized();
    }

    PoseMaps maps;
    maps.position = Tensor::zeros({1, 3, resolution, resolution});
    maps.normal = Tensor::zeros({1, 3, resolution, resolution});
    for (const auto& e : ctx.entries) {
        int row = e.texel / resolution, col = e.texel % resolution;
        Vec3 p = e.rot * e.anchor + e.trans;
        const auto& tx = anchors.texels[static_cast<size_t>(e.texel)];
        Vec3 n = tri_normal[static_cast<size_t>(tx.triangle)];
        maps.position.at4(0, 0, row, col) = p.x;
        maps.position.at4(0, 1, row, col) = p.y;
        maps.position.at4(0, 2, row, col) = p.z;
        maps.normal.at4(0, 0, row, col) = n.x;
        maps.normal.at4(0, 1, row, col) = n.y;
        maps.normal.at4(0, 2, row, col) = n.z;
    }
    return maps;
}

namespace {

void check_map_shapes(const Tensor& offset, const Tensor& scale, const Tensor& quat,
                      const Tensor& opacity, const Tensor& sh, int T) {
    auto expect = [&](const Tensor& t, int ch, const char* name) {
        if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != ch || t.dim(2) != T || t.dim(3) != T)
            throw Error(std::string("gaussians_to_world: ") + name + " must be [1," +
                        std::to_string(ch) + "," + std::to_string(T) + "," + std::to_string(T) +
                        "], got " + shape_str(t.shape));
    };
    expect(offset, 3, "offset");
    expect(scale, 3, "scale");
    expect(quat, 4, "quaternion");
    expect(opacity, 1, "opacity");
    expect(sh, 48, "sh");
}

// q_out = qb ⊗ qt is linear in qt; rows of L(qb) acting on (w,x,y,z)
void left_quat_matrix(const Quat& q, float L[16]) {
    const float w = q.w, x = q.x, y = q.y, z = q.z;
    const float rows[16] = {w, -x, -y, -z, x, w, -z, y, y, z, w, -x, z, -y, x, w};
    std::copy(rows, rows + 16, L);
}

}  // namespace

std::vector<Gaussian> gaussians_to_world(const GaussianMapDecoded& maps,
                                         const UVAnchorMap& anchors, const Template& tpl,
                                         const Pose& pose) {
    const int T = anchors.resolution;
    check_map_shapes(maps.offset, maps.scale, maps.quaternion, maps.opacity, maps.sh, T);
    SkinningContext ctx = build_skinning(tpl, anchors, pose);
    std::vector<Gaussian> out;
    out.reserve(ctx.entries.size());
    for (const auto& e : ctx.entries) {
        int row = e.texel / T, col = e.texel % T;
        Gaussian g;
        Vec3 d{maps.offset.at4(0, 0, row, col), maps.offset.at4(0, 1, row, col),
               maps.offset.at4(0, 2, row, col)};
        g.position = e.rot * (e.anchor + d) + e.trans;
        g.scale = {maps.scale.at4(0, 0, row, col), maps.scale.at4(0, 1, row, col),
                   maps.scale.at4(0, 2, row, col)};
        Quat qt{maps.quaternion.at4(0, 0, row, col), maps.quaternion.at4(0, 1, row, col),
                maps.quaternion.at4(0, 2, row, col), maps.quaternion.at4(0, 3, row, col)};
        g.rotation = e.bone_quat * qt;
        g.opacity = maps.opacity.at4(0, 0, row, col);
        for (int c = 0; c < 48; ++c) g.sh[c] = maps.sh.at4(0, c, row, col);
        out.push_back(g);
    }
    return out;
}

int gaussians_to_world_node(Tape& tape, int offset, int scale, int quaternion, int opacity,
                            int sh, std::shared_ptr<const SkinningContext> ctx) {
    const int T = ctx->resolution;
    check_map_shapes(tape.val(offset), tape.val(scale), tape.val(quaternion), tape.val(opacity),
                     tape.val(sh), T);
    const int M = static_cast<int>(ctx->entries.size());
    Tensor packed = Tensor::zeros({M, kGaussianParams});
    const Tensor& dv = tape.val(offset);
    const Tensor& sv = tape.val(scale);
    const Tensor& qv = tape.val(quaternion);
    const Tensor& ov = tape.val(opacity);
    const Tensor& hv = tape.val(sh);
    for (int m = 0; m < M; ++m) {
        const auto& e = ctx->entries[static_cast<size_t>(m)];
        int row = e.texel / T, col = e.texel % T;
        float* r = packed.data.data() + static_cast<int64_t>(m) * kGaussianParams;
        Vec3 d{dv.at4(0, 0, row, col), dv.at4(0, 1, row, col), dv.at4(0, 2, row, col)};
        Vec3 p = e.rot * (e.anchor + d) + e.trans;
        r[0] = p.x;
        r[1] = p.y;
        r[2] = p.z;
        r[3] = sv.at4(0, 0, row, col);
        r[4] = sv.at4(0, 1, row, col);
        r[5] = sv.at4(0, 2, row, col);
        Quat qt{qv.at4(0, 0, row, col), qv.at4(0, 1, row, col), qv.at4(0, 2, row, col),
                qv.at4(0, 3, row, col)};
        Quat qo = e.bone_quat * qt;
        r[6] = qo.w;
        r[7] = qo.x;
        r[8] = qo.y;
        r[9] = qo.z;
        r[10] = ov.at4(0, 0, row, col);
        for (int c = 0; c < 48; ++c) r[11 + c] = hv.at4(0, c, row, col);
    }

    return tape.custom(
        std::move(packed), {offset, scale, quaternion, opacity, sh},
        [ctx, offset, scale, quaternion, opacity, sh](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            const int T = ctx->resolution;
            const int M = static_cast<int>(ctx->entries.size());
            bool wd = t.requires_grad(offset), ws = t.requires_grad(scale),
                 wq = t.requires_grad(quaternion), wo = t.requires_grad(opacity),
                 wh = t.requires_grad(sh);
            Tensor* gd = wd ? &t.grad_ref(offset) : nullptr;
            Tensor* gs = ws ? &t.grad_ref(scale) : nullptr;
            Tensor* gq = wq ? &t.grad_ref(quaternion) : nullptr;
            Tensor* go = wo ? &t.grad_ref(opacity) : nullptr;
            Tensor* gh = wh ? &t.grad_ref(sh) : nullptr;
            for (int m = 0; m < M; ++m) {
                const auto& e = ctx->entries[static_cast<size_t>(m)];
                int row = e.texel / T, col = e.texel % T;
                const float* gr = g.data.data() + static_cast<int64_t>(m) * kGaussianParams;
                if (gd) {
                    // p = R(anchor + d) + t  =>  dd = R^T dp
                    Vec3 dp{gr[0], gr[1], gr[2]};
                    Vec3 dd = e.rot.transposed() * dp;
                    gd->at4(0, 0, row, col) += dd.x;
                    gd->at4(0, 1, row, col) += dd.y;
                    gd->at4(0, 2, row, col) += dd.z;
                }
                if (gs)
                    for (int c = 0; c < 3; ++c) gs->at4(0, c, row, col) += gr[3 + c];
                if (gq) {
                    float L[16];
                    left_quat_matrix(e.bone_quat, L);
                    for (int c = 0; c < 4; ++c) {
                        float acc = 0;
                        for (int r2 = 0; r2 < 4; ++r2) acc += L[r2 * 4 + c] * gr[6 + r2];
                        gq->at4(0, c, row, col) += acc;
                    }
                }
                if (go) go->at4(0, 0, row, col) += gr[10];
                if (gh)
                    for (int c = 0; c < 48; ++c) gh->at4(0, c, row, col) += gr[11 + c];
            }
        });
}

float bend_amount(const Pose& pose) {
    if (pose.joint_rotations.size() <= 1) return 0.0f;
    double acc = 0.0;
    for (size_t j = 1; j < pose.joint_rotations.size(); ++j)
        acc += pose.joint_rotations[j].norm();
    return static_cast<float>(acc / (static_cast<double>(pose.joint_rotations.size() - 1) * kPi));
}

Pose load_pose(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("pose: cannot open " + path);
    nlohmann::json j;
    in >> j;
    Pose pose;
    const nlohmann::json* joints = &j;
    if (j.is_object()) {
        joints = &j.at("joints");
        if (j.contains("root_translation")) {
            auto rt = j["root_translation"];
            pose.root_translation = {rt[0].get<float>(), rt[1].get<float>(), rt[2].get<float>()};
        }
    }
    for (const auto& row : *joints) {
        if (row.size() != 3) throw Error("pose: joint entries must be [x,y,z] in " + path);
        pose.joint_rotations.push_back({row[0].get<float>(), row[1].get<float>(), row[2].get<float>()});
    }
    return pose;
}

void save_pose(const Pose& pose, const std::string& path) {
    nlohmann::json joints = nlohmann::json::array();
    for (const Vec3& aa : pose.joint_rotations) joints.push_back({aa.x, aa.y, aa.z});
    nlohmann::json j;
    if (pose.root_translation.norm() > 0) {
        j["joints"] = joints;
        j["root_translation"] = {pose.root_translation.x, pose.root_translation.y,
                                 pose.root_translation.z};
    } else {
        j = joints;
    }
    std::ofstream out(path);
    if (!out) throw Error("pose: cannot write " + path);
    out << j.dump() << "\n";
}

}  // namespace wsd
