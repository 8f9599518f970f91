#include <doctest.h>

#include "impairdetect/features.hpp"
#include "impairdetect/io.hpp"
#include "impairdetect/preprocess.hpp"
#include "impairdetect/synth.hpp"
#include "impairdetect/training.hpp"

using namespace impairdetect;

namespace {

io::Json shipped(const char* name) {
  return io::read_json(std::filesystem::path(IMPAIRDETECT_SOURCE_DIR) / "data" / name);
}

}  // namespace

// The files under data/ document the built-in defaults and must not drift.
TEST_SUITE("data_files") {

TEST_CASE("shipped configs equal the built-in defaults") {
  CHECK(shipped("surrogate_arousal.json") == default_arousal_surrogate().to_json());
  CHECK(shipped("feature_catalog.json") == FeatureCatalog::default_catalog().to_json());
  CHECK(shipped("synth_desk.json") == SynthConfig::desk_default().to_json());
  CHECK(shipped("train_cnn.json") == nn::TrainConfig{}.to_json());
  CHECK(LogisticArousalSurrogate::load(std::filesystem::path(IMPAIRDETECT_SOURCE_DIR) / "data" / "surrogate_arousal.json")
            .to_json() == default_arousal_surrogate().to_json());
}

}
