#include "impairdetect/cohort.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <set>

namespace impairdetect {

namespace fs = std::filesystem;

const DrivingPhase& ParticipantRecord::phase(int index) const {
  for (const auto& p : phases) {
    if (p.index == index) return p;
  }
  throw ValidationError("participant " + participant.id + " has no phase " + std::to_string(index));
}

const DrivingPhase* ParticipantRecord::phase_containing(double start, double end) const {
  for (const auto& p : phases) {
    if (start >= p.start_s && end <= p.end_s) return &p;
  }
  return nullptr;
}

const ParticipantRecord& Cohort::find(const std::string& id) const {
  for (const auto& p : participants) {
    if (p.participant.id == id) return p;
  }
  throw ValidationError("unknown participant '" + id + "'");
}

std::size_t Cohort::count(Group g) const {
  return static_cast<std::size_t>(std::count_if(participants.begin(), participants.end(),
                                                [g](const auto& p) { return p.participant.group == g; }));
}

std::vector<std::string> Cohort::ids() const {
  std::vector<std::string> out;
  for (const auto& p : participants) out.push_back(p.participant.id);
  return out;
}

void validate_cohort(const Cohort& cohort) {
  std::set<std::string> seen;
  for (const auto& rec : cohort.participants) {
    const auto& id = rec.participant.id;
    if (id.empty()) throw ValidationError("empty participant id");
    if (!seen.insert(id).second) throw ValidationError("duplicate participant id '" + id + "'");
    for (std::size_t i = 0; i < rec.phases.size(); ++i) {
      const auto& ph = rec.phases[i];
      if (!(ph.start_s < ph.end_s)) throw ValidationError(id + ": phase " + std::to_string(ph.index) + " has start >= end");
      if (ph.index < 1 || ph.index > 3) throw ValidationError(id + ": phase index must be in {1,2,3}");
      if (i > 0) {
        const auto& prev = rec.phases[i - 1];
        if (ph.index <= prev.index || ph.start_s < prev.end_s) {
          throw ValidationError(id + ": phases must be ordered by index and disjoint");
        }
      }
    }
    for (const auto* s : {&rec.ibi, &rec.hr, &rec.accel_x, &rec.accel_y, &rec.accel_z}) s->validate();
    for (const auto& m : rec.bac) {
      if (!(m.bac_g_per_dl >= 0.0)) throw ValidationError(id + ": negative BAC measurement");
    }
  }
}

SampleSeries read_signal_csv(const fs::path& path, Modality modality) {
  if (!fs::exists(path)) throw ValidationError("missing signal file: " + path.string());
  auto table = io::read_csv(path);
  auto tcol = table.column("t_s");
  auto vcol = table.column("value");
  SampleSeries series{modality, {}};
  series.samples.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto row_no = io::CsvTable::file_row(r);
    double t = 0.0, v = 0.0;
    try {
      t = io::parse_double(table.rows[r][tcol]);
      v = io::parse_double(table.rows[r][vcol]);
    } catch (const ValidationError& e) {
      throw IngestError(table.path, row_no, e.what());
    }
    if (!std::isfinite(t) || !std::isfinite(v)) throw IngestError(table.path, row_no, "non-finite value");
    if (!series.samples.empty() && !(t > series.samples.back().t)) {
      throw IngestError(table.path, row_no, "non-monotonic timestamp");
    }
    if ((modality == Modality::ibi_ms || modality == Modality::hr_bpm) && !(v > 0.0)) {
      throw IngestError(table.path, row_no, "value must be positive");
    }
    series.samples.push_back({t, v});
  }
  return series;
}

void write_signal_csv(const fs::path& path, const SampleSeries& series) {
  io::CsvWriter w(path);
  w.row({"t_s", "value"});
  for (const auto& s : series.samples) w.row({io::format_double(s.t), io::format_double(s.value)});
  w.close();
}

namespace {

void read_accel_csv(const fs::path& path, ParticipantRecord& rec) {
  if (!fs::exists(path)) throw ValidationError("missing signal file: " + path.string());
  auto table = io::read_csv(path);
  auto tcol = table.column("t_s");
  std::array<std::size_t, 3> cols{table.column("x_g"), table.column("y_g"), table.column("z_g")};
  std::array<SampleSeries*, 3> axes{&rec.accel_x, &rec.accel_y, &rec.accel_z};
  for (auto* a : axes) a->samples.reserve(table.rows.size());
  double last_t = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto row_no = io::CsvTable::file_row(r);
    try {
      double t = io::parse_double(table.rows[r][tcol]);
      if (!std::isfinite(t)) throw ValidationError("non-finite timestamp");
      if (!(t > last_t)) throw IngestError(table.path, row_no, "non-monotonic timestamp");
      last_t = t;
      for (std::size_t k = 0; k < 3; ++k) {
        double v = io::parse_double(table.rows[r][cols[k]]);
        if (!std::isfinite(v)) throw ValidationError("non-finite value");
        axes[k]->samples.push_back({t, v});
      }
    } catch (const IngestError&) {
      throw;
    } catch (const ValidationError& e) {
      throw IngestError(table.path, row_no, e.what());
    }
  }
}

void write_accel_csv(const fs::path& path, const ParticipantRecord& rec) {
  if (rec.accel_x.size() != rec.accel_y.size() || rec.accel_x.size() != rec.accel_z.size()) {
    throw ValidationError("accelerometer axes of " + rec.participant.id + " differ in length");
  }
  io::CsvWriter w(path);
  w.row({"t_s", "x_g", "y_g", "z_g"});
  for (std::size_t i = 0; i < rec.accel_x.size(); ++i) {
    w.row({io::format_double(rec.accel_x.samples[i].t), io::format_double(rec.accel_x.samples[i].value),
           io::format_double(rec.accel_y.samples[i].value), io::format_double(rec.accel_z.samples[i].value)});
  }
  w.close();
}

}  // namespace

Cohort ingest_cohort(const fs::path& manifest_path) {
  auto manifest = io::read_json(manifest_path);
  return ingest_cohort(manifest_path.parent_path(), manifest);
}

namespace {

Cohort ingest_impl(const fs::path& root, const io::Json& manifest) {
  if (!manifest.contains("participants") || !manifest["participants"].is_array()) {
    throw ValidationError("manifest: 'participants' array required");
  }
  Cohort cohort;
  for (const auto& pj : manifest["participants"]) {
    ParticipantRecord rec;
    rec.participant.id = pj.at("id").get<std::string>();
    rec.participant.group = parse_group(pj.at("group").get<std::string>());
    for (const auto& phj : pj.at("phases")) {
      DrivingPhase ph;
      ph.index = phj.at("index").get<int>();
      ph.start_s = phj.at("start_s").get<double>();
      ph.end_s = phj.at("end_s").get<double>();
      if (phj.contains("scenario_sequence")) ph.scenario_sequence = phj["scenario_sequence"].get<std::vector<std::string>>();
      rec.phases.push_back(ph);
    }
    std::sort(rec.phases.begin(), rec.phases.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    const auto& files = pj.at("files");
    rec.ibi = read_signal_csv(root / files.at("ibi").get<std::string>(), Modality::ibi_ms);
    rec.hr = read_signal_csv(root / files.at("hr").get<std::string>(), Modality::hr_bpm);
    read_accel_csv(root / files.at("accel").get<std::string>(), rec);
    cohort.participants.push_back(std::move(rec));
  }

  const auto bac_path = root / manifest.at("bac_file").get<std::string>();
  if (!fs::exists(bac_path)) throw ValidationError("missing BAC file: " + bac_path.string());
  auto table = io::read_csv(bac_path);
  auto pcol = table.column("participant_id");
  auto tcol = table.column("t_s");
  auto bcol = table.column("bac_g_per_dl");
  std::map<std::string, std::vector<BacMeasurement>> by_id;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto row_no = io::CsvTable::file_row(r);
    BacMeasurement m;
    m.participant_id = table.rows[r][pcol];
    try {
      m.t = io::parse_double(table.rows[r][tcol]);
      m.bac_g_per_dl = io::parse_double(table.rows[r][bcol]);
    } catch (const ValidationError& e) {
      throw IngestError(table.path, row_no, e.what());
    }
    if (!(m.bac_g_per_dl >= 0.0)) throw IngestError(table.path, row_no, "BAC must be >= 0");
    by_id[m.participant_id].push_back(m);
  }
  for (auto& rec : cohort.participants) {
    auto it = by_id.find(rec.participant.id);
    if (it != by_id.end()) {
      rec.bac = std::move(it->second);
      std::stable_sort(rec.bac.begin(), rec.bac.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
      by_id.erase(it);
    }
  }
  if (!by_id.empty()) {
    throw ValidationError("BAC file references unknown participant '" + by_id.begin()->first + "'");
  }
  validate_cohort(cohort);
  return cohort;
}

}  // namespace

Cohort ingest_cohort(const fs::path& root, const io::Json& manifest) {
  try {
    return ingest_impl(root, manifest);
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
}

void write_cohort(const Cohort& cohort, const fs::path& dir) {
  fs::create_directories(dir);
  io::Json manifest;
  manifest["participants"] = io::Json::array();
  io::CsvWriter bac(dir / "bac.csv");
  bac.row({"participant_id", "t_s", "bac_g_per_dl"});
  for (const auto& rec : cohort.participants) {
    const auto& id = rec.participant.id;
    io::Json pj;
    pj["id"] = id;
    pj["group"] = std::string(to_string(rec.participant.group));
    pj["phases"] = io::Json::array();
    for (const auto& ph : rec.phases) {
      io::Json phj{{"index", ph.index}, {"start_s", ph.start_s}, {"end_s", ph.end_s}};
      if (!ph.scenario_sequence.empty()) phj["scenario_sequence"] = ph.scenario_sequence;
      pj["phases"].push_back(phj);
    }
    pj["files"] = {{"ibi", id + "_ibi.csv"}, {"hr", id + "_hr.csv"}, {"accel", id + "_accel.csv"}};
    manifest["participants"].push_back(pj);
    write_signal_csv(dir / (id + "_ibi.csv"), rec.ibi);
    write_signal_csv(dir / (id + "_hr.csv"), rec.hr);
    write_accel_csv(dir / (id + "_accel.csv"), rec);
    for (const auto& m : rec.bac) bac.row({id, io::format_double(m.t), io::format_double(m.bac_g_per_dl)});
  }
  bac.close();
  manifest["bac_file"] = "bac.csv";
  io::write_json(dir / "manifest.json", manifest);
}

}  // namespace impairdetect
