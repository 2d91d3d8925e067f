#pragma once

#include <filesystem>
#include <string>

#include "cola/lidar_io.hpp"
#include "test_util.hpp"

namespace cola::test {

// Two small sources with different vocabularies and a six-class target.
inline constexpr const char* kTinyCorpus = R"(
[dataset src_a]
scenes = 4
scans_per_scene = 2
extent = 24
sensor.beams = 12
sensor.azimuth_resolution = 3
sensor.max_range = 20
count.road = 1
count.building = 2
count.car = 2
count.vegetation = 2
count.pole = 2
label.road = 1:road
label.terrain = 2:terrain
label.building = 3:building
label.car = 4:car
label.vegetation = 5:vegetation
label.pole = 6:pole

[dataset src_b]
scenes = 3
scans_per_scene = 2
extent = 24
sensor.beams = 8
sensor.azimuth_resolution = 4
sensor.max_range = 20
count.road = 1
count.fence = 2
count.car = 3
count.trunk = 2
label.road = 10:street
label.terrain = 11:grass
label.fence = 12:fence
label.car = 13:auto
label.trunk = 14:tree
label.vegetation = 15:leaves

[dataset tgt]
scenes = 10
scans_per_scene = 2
extent = 24
sensor.beams = 10
sensor.azimuth_resolution = 3
sensor.max_range = 20
count.road = 1
count.building = 2
count.car = 2
count.vegetation = 2
count.pole = 2
label.road = 1:road
label.terrain = 2:terrain
label.building = 3:building
label.car = 4:car
label.vegetation = 5:plants
label.pole = 6:pole
)";

inline constexpr const char* kTinyMapA =
    "dataset,fine_id,fine_name,coarse_id,coarse_name\n"
    "src_a,0,unlabeled,0,ignore\n"
    "src_a,1,road,1,driveable_ground\n"
    "src_a,2,terrain,2,other_ground\n"
    "src_a,3,building,3,structure\n"
    "src_a,4,car,4,vehicles\n"
    "src_a,5,vegetation,5,nature\n"
    "src_a,6,pole,8,static_objects\n";

inline constexpr const char* kTinyMapB =
    "dataset,fine_id,fine_name,coarse_id,coarse_name\n"
    "src_b,0,unlabeled,0,ignore\n"
    "src_b,10,street,1,driveable_ground\n"
    "src_b,11,grass,2,other_ground\n"
    "src_b,12,fence,3,structure\n"
    "src_b,13,auto,4,vehicles\n"
    "src_b,14,tree,5,nature\n"
    "src_b,15,leaves,5,nature\n";

/// Writes corpus.cfg and maps/ into dir and returns an experiment spec text
/// pointing at them.
inline std::string write_tiny_experiment(const std::filesystem::path& dir,
                                         const std::string& arms = "scratch, cola, fine_label, multi_head",
                                         const char* map_b = kTinyMapB) {
  std::filesystem::create_directories(dir / "maps");
  write_text_file(dir / "corpus.cfg", kTinyCorpus);
  write_text_file(dir / "maps" / "src_a.coarse8.csv", kTinyMapA);
  write_text_file(dir / "maps" / "src_b.coarse8.csv", map_b);
  return "name = tiny\n"
         "corpus_config = corpus.cfg\n"
         "corpus_seed = 3\n"
         "map_dir = maps\n"
         "output_dir = out\n"
         "target = tgt\n"
         "pretrain = src_a, src_b\n"
         "arms = " + arms + "\n"
         "fractions = 50, 100\n"
         "seeds = 1\n"
         "hidden = 8, 8\n"
         "\n[phase pretrain]\nepochs = 2\nbatch_scans = 2\nlr = 0.05\n"
         "\n[phase finetune]\nepochs = 3\nbatch_scans = 2\nlr = 0.05\n";
}

}  // namespace cola::test
