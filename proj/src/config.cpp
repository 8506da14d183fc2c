// SPDX-License-Identifier: Apache-2.0
#include "voxocc/config.hpp"

#include <fstream>
#include <sstream>

namespace voxocc {

namespace {

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
    }
    if (out.empty()) throw ConfigError("empty integer list");
    return out;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "on") return true;
    if (s == "false" || s == "0" || s == "off") return false;
    throw ConfigError("bad boolean value: " + s);
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

} // namespace

void ExperimentConfig::apply(const std::string& key, const std::string& value) {
    try {
        if (key == "scene_boxes") scene_boxes = std::stoi(value);
        else if (key == "scene_walls") scene_walls = std::stoi(value);
        else if (key == "occluder_fraction") occluder_fraction = std::stod(value);
        else if (key == "classes") classes = std::stoi(value);
        else if (key == "grid_h") grid_h = std::stoi(value);
        else if (key == "grid_w") grid_w = std::stoi(value);
        else if (key == "grid_z") grid_z = std::stoi(value);
        else if (key == "voxel_size") voxel_size = std::stod(value);
        else if (key == "origin_x") origin_x = std::stod(value);
        else if (key == "origin_y") origin_y = std::stod(value);
        else if (key == "origin_z") origin_z = std::stod(value);
        else if (key == "cameras") cameras = std::stoi(value);
        else if (key == "image_size") image_size = std::stoi(value);
        else if (key == "train_scenes") train_scenes = std::stoi(value);
        else if (key == "eval_scenes") eval_scenes = std::stoi(value);
        else if (key == "seed") seed = std::stoull(value);
        else if (key == "levels") levels = std::stoi(value);
        else if (key == "channels") channels = std::stoi(value);
        else if (key == "heads") heads = std::stoi(value);
        else if (key == "layers") layers = parse_int_list(value);
        else if (key == "points") points = parse_int_list(value);
        else if (key == "max_queries") max_queries = parse_int_list(value);
        else if (key == "posenc_frequencies") posenc_frequencies = std::stoi(value);
        else if (key == "field_hidden") field_hidden = parse_int_list(value);
        else if (key == "sampling") sampling = value;
        else if (key == "coarse_samples") coarse_samples = std::stoi(value);
        else if (key == "ray_samples") ray_samples = std::stoi(value);
        else if (key == "rays_per_camera") rays_per_camera = std::stoi(value);
        else if (key == "bce_voxels") bce_voxels = std::stoi(value);
        else if (key == "use_nerf") use_nerf = parse_bool(value);
        else if (key == "use_attention") use_attention = parse_bool(value);
        else if (key == "use_sparse_conv") use_sparse_conv = parse_bool(value);
        else if (key == "theta") theta = std::stod(value);
        else if (key == "beta") beta = std::stod(value);
        else if (key == "silog_lambda") silog_lambda = std::stod(value);
        else if (key == "alpha_decay") alpha_decay = std::stod(value);
        else if (key == "occ_bce_weight") occ_bce_weight = std::stod(value);
        else if (key == "miss_probability") miss_probability = std::stod(value);
        else if (key == "free_class_weight") free_class_weight = std::stod(value);
        else if (key == "lr") lr = std::stod(value);
        else if (key == "momentum") momentum = std::stod(value);
        else if (key == "steps") steps = std::stoi(value);
        else if (key == "eval_protocol") eval_protocol = value;
        else if (key == "out_dir") out_dir = value;
        else throw ConfigError("unknown config key: " + key);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("bad value for '" + key + "': " + value + " (" + e.what() + ")");
    }
}

void ExperimentConfig::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::stringstream ss(line);
        std::string key, value;
        if (!(ss >> key)) continue;
        if (!(ss >> value))
            throw ConfigError(path + ":" + std::to_string(lineno) + ": key without value");
        std::string extra;
        if (ss >> extra)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": trailing tokens");
        apply(key, value);
    }
}

void ExperimentConfig::validate() const {
    if (levels < 2) throw ConfigError("levels must be >= 2");
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (channels < heads || channels % heads != 0)
        throw ConfigError("channels must be a positive multiple of heads");
    if (int(layers.size()) < levels || int(points.size()) < levels ||
        int(max_queries.size()) < levels)
        throw ConfigError("layers/points/max_queries need one entry per level");
    if (sampling != "hierarchical" && sampling != "probabilistic" &&
        sampling != "occupancy_aware")
        throw ConfigError("sampling must be hierarchical|probabilistic|occupancy_aware");
    if (eval_protocol != "all_occupied" && eval_protocol != "visible_only")
        throw ConfigError("eval_protocol must be all_occupied|visible_only");
    if (coarse_samples < ray_samples)
        throw ConfigError("coarse_samples must be >= ray_samples");
    if (!(theta > 0.0 && theta < 1.0)) throw ConfigError("theta must be in (0,1)");
    const int f = 1 << (levels - 1);
    if (grid_h % f || grid_w % f || grid_z % f)
        throw ConfigError("grid dims must divide by 2^(levels-1)");
    if (grid_h <= 0 || grid_w <= 0 || grid_z <= 0) throw ConfigError("grid dims must be positive");
    if (train_scenes < 1 || eval_scenes < 1) throw ConfigError("need at least one scene per split");
    if (steps < 0) throw ConfigError("steps must be >= 0");
}

std::string ExperimentConfig::to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "scene_boxes " << scene_boxes << "\nscene_walls " << scene_walls
       << "\noccluder_fraction " << occluder_fraction << "\nclasses " << classes
       << "\ngrid_h " << grid_h << "\ngrid_w " << grid_w << "\ngrid_z " << grid_z
       << "\nvoxel_size " << voxel_size << "\norigin_x " << origin_x << "\norigin_y "
       << origin_y << "\norigin_z " << origin_z << "\ncameras " << cameras
       << "\nimage_size " << image_size << "\ntrain_scenes " << train_scenes
       << "\neval_scenes " << eval_scenes << "\nseed " << seed << "\nlevels " << levels
       << "\nchannels " << channels << "\nheads " << heads << "\nlayers " << join(layers)
       << "\npoints " << join(points) << "\nmax_queries " << join(max_queries)
       << "\nposenc_frequencies " << posenc_frequencies << "\nfield_hidden "
       << join(field_hidden) << "\nsampling " << sampling << "\ncoarse_samples "
       << coarse_samples << "\nray_samples " << ray_samples << "\nrays_per_camera "
       << rays_per_camera << "\nbce_voxels " << bce_voxels << "\nuse_nerf "
       << (use_nerf ? "true" : "false") << "\nuse_attention "
       << (use_attention ? "true" : "false") << "\nuse_sparse_conv "
       << (use_sparse_conv ? "true" : "false") << "\ntheta " << theta << "\nbeta " << beta
       << "\nsilog_lambda " << silog_lambda << "\nalpha_decay " << alpha_decay
       << "\nocc_bce_weight " << occ_bce_weight << "\nmiss_probability " << miss_probability
       << "\nfree_class_weight " << free_class_weight
       << "\nlr " << lr << "\nmomentum " << momentum << "\nsteps " << steps
       << "\neval_protocol " << eval_protocol << "\nout_dir " << out_dir << "\n";
    return os.str();
}

} // namespace voxocc
