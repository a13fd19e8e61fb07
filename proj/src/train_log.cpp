#include "genaf/train_log.hpp"

#include <fstream>
#include <json.hpp>

#include "genaf/error.hpp"

namespace genaf {

void TrainLog::close_epoch(int64_t epoch) {
  EpochRecord rec{epoch};
  int64_t n = 0;
  for (const auto& s : steps) {
    if (s.epoch != epoch) continue;
    rec.dat += s.dat;
    rec.gr += s.gr;
    rec.total += s.total;
    ++n;
  }
  if (n > 0) {
    rec.dat /= n;
    rec.gr /= n;
    rec.total /= n;
  }
  epochs.push_back(rec);
}

void TrainLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& s : steps) {
    nlohmann::json j{{"stage", stage}, {"epoch", s.epoch}, {"step", s.step}, {"dat", s.dat}, {"gr", s.gr},
                     {"total", s.total}, {"lr_e", s.lr_e}, {"lr_c", s.lr_c}, {"wall_time", s.wall_time}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

TrainLog TrainLog::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  TrainLog log;
  std::string line;
  int64_t last_epoch = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      log.stage = j.value("stage", log.stage);
      StepRecord s{j.at("epoch").get<int64_t>(), j.at("step").get<int64_t>(), j.at("dat").get<double>(),
                   j.at("gr").get<double>(),     j.at("total").get<double>(), j.at("lr_e").get<double>(),
                   j.at("lr_c").get<double>(),   j.at("wall_time").get<double>()};
      if (last_epoch >= 0 && s.epoch != last_epoch) log.close_epoch(last_epoch);
      last_epoch = s.epoch;
      log.steps.push_back(s);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ": malformed log line: " + e.what());
    }
  }
  if (last_epoch >= 0) log.close_epoch(last_epoch);
  return log;
}

}  // namespace genaf
