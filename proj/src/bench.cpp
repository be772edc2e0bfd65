#include "ocl/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "ocl/mathutil.hpp"
#include "ocl/rewards.hpp"

namespace ocl {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNan;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.empty()) return kNan;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += sq(x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

void csv_number(std::ostream& os, double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  os << buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

double cot(double power, double mass, double gravity, double speed) {
  if (speed < kCotSpeedFloor) throw SpeedBelowFloor(speed);
  return power / (mass * gravity * speed);
}

const char* to_string(TraverseDirection d) {
  return d == TraverseDirection::Forward ? "forward" : "sideways";
}

int TraverseResult::bin_count() const {
  return static_cast<int>(std::ceil(course_length / bin_width - 1e-9));
}

TraverseResult run_traverse(Policy& policy, const RobotModel& model,
                            TraverseDirection direction,
                            const TraverseConfig& cfg) {
  const Heightfield course = make_traverse_course(cfg.seed);
  const Simulator sim(model, &course);
  const double g = -sim.params().gravity.z();
  const double dt = sim.params().tick_dt();

  // The course runs along +y: Forward robots face up the course and track a
  // body-x command, Sideways robots keep facing +x and track body-y.
  Spawn spawn;
  spawn.yaw = direction == TraverseDirection::Forward ? 0.5 * kPi : 0.0;
  Command command;
  if (direction == TraverseDirection::Forward) command.vx = cfg.command_speed;
  else command.vy = cfg.command_speed;
  command.heading = spawn.yaw;

  RewardConfig term_cfg;  // stock fall detection, bench-specific clock
  term_cfg.episode_time_limit = cfg.timeout;

  TraverseResult result;
  result.morphology = cfg.label.empty()
                          ? to_string(model.limbs[0].geometry.kind)
                          : cfg.label;
  result.direction = direction;
  result.course_seed = cfg.seed;
  result.bin_width = cfg.bin_width;
  result.course_length = cfg.course_length;
  result.robot_mass = model.body.mass;
  result.gravity = g;
  result.foothold = foothold_width(model, nominal_stance(model));

  const int nb = result.bin_count();
  const int wheel_joints = std::max(0, model.joint_count() - 8);
  const Rng stream_root(cfg.seed);

  for (int i = 0; i < cfg.n_robots; ++i) {
    // Each robot gets a private stream so its run does not depend on how
    // long its squad mates survived.
    Rng rng = stream_root.fork(16 + static_cast<uint64_t>(i));
    SimState s = sim.reset(spawn, rng);

    EpisodeMetrics em;
    em.robot_id = i;
    em.trajectory.push_back(
        {0.0, s.base_pos.x(), s.base_pos.y(), s.base_pos.z(), 0.0, 0.0});

    std::vector<double> bin_time(nb, 0.0), bin_dist(nb, 0.0),
        bin_work(nb, 0.0), icot_time(nb, 0.0), icot_sum(nb, 0.0);

    MatX obs(1, sim.observation_size());
    while (true) {
      obs.row(0) = sim.observe(s, command).transpose();
      MatX act = policy.actor_mean(obs);
      if (cfg.stochastic_actions) act = policy.sample(act, rng);
      const VecX target =
          action_to_target(act.row(0).transpose(), sim.default_joint_pos(),
                           policy.spec().action_scale,
                           policy.spec().wheel_action_scale, wheel_joints);
      sim.step(s, target);

      const double speed = std::hypot(s.base_linvel.x(), s.base_linvel.y());
      em.trajectory.push_back({s.episode_time, s.base_pos.x(),
                               s.base_pos.y(), s.base_pos.z(), speed,
                               s.tick_power});
      em.integrated_power += s.tick_power * dt;

      const double y = s.base_pos.y();
      if (y >= 0.0 && y < cfg.course_length) {
        const int k = std::min(nb - 1, static_cast<int>(y / cfg.bin_width));
        bin_time[k] += dt;
        bin_dist[k] += speed * dt;
        bin_work[k] += s.tick_power * dt;
        if (speed >= kCotSpeedFloor) {
          icot_time[k] += dt;
          icot_sum[k] += cot(s.tick_power, result.robot_mass, g, speed) * dt;
        }
      }

      if (y >= cfg.course_length) {
        em.completed = true;
        em.completion_time = s.episode_time;
        break;
      }
      if (check_termination(s, term_cfg).status != EpisodeStatus::Running)
        break;  // fell or timed out: DNF
    }
    em.total_energy = s.mech_energy;

    em.bin_speed.assign(nb, kNan);
    em.bin_cot.assign(nb, kNan);
    for (int k = 0; k < nb; ++k) {
      if (bin_time[k] <= 0.0) continue;
      const double v = bin_dist[k] / bin_time[k];
      em.bin_speed[k] = v;
      if (cfg.instantaneous_cot) {
        if (icot_time[k] > 0.0) em.bin_cot[k] = icot_sum[k] / icot_time[k];
      } else if (v >= kCotSpeedFloor) {
        em.bin_cot[k] = cot(bin_work[k] / bin_time[k], result.robot_mass, g, v);
      }
    }
    result.robots.push_back(std::move(em));
  }
  return result;
}

BenchReport compare(const std::vector<TraverseResult>& results,
                    int baseline) {
  if (results.empty()) throw MismatchedBinning("no results to compare");
  if (baseline < 0 || baseline >= static_cast<int>(results.size()))
    throw MismatchedBinning("baseline index out of range");
  const TraverseResult& ref = results[0];
  for (const TraverseResult& r : results) {
    if (r.course_seed != ref.course_seed)
      throw MismatchedBinning("course seeds differ (" +
                              std::to_string(r.course_seed) + " vs " +
                              std::to_string(ref.course_seed) + ")");
    if (r.bin_width != ref.bin_width || r.course_length != ref.course_length)
      throw MismatchedBinning("bin layout differs between runs");
  }

  BenchReport report;
  report.bin_width = ref.bin_width;
  report.course_seed = ref.course_seed;
  report.baseline = baseline;
  const int nb = ref.bin_count();
  for (int k = 0; k < nb; ++k) report.bin_centers.push_back(ref.bin_center(k));

  for (const TraverseResult& r : results) {
    MorphologySummary m;
    m.name = r.morphology;
    m.foothold = r.foothold;
    m.curve_speed.assign(nb, kNan);
    m.curve_cot.assign(nb, kNan);
    m.curve_count.assign(nb, 0);

    std::vector<double> times, energies;
    for (const EpisodeMetrics& em : r.robots) {
      if (em.completed) {
        ++m.completed;
        times.push_back(em.completion_time);
        energies.push_back(em.total_energy);
      } else {
        ++m.dnf;
      }
    }
    m.mean_completion = mean_of(times);
    m.sd_completion = sd_of(times);
    m.mean_energy = mean_of(energies);
    m.sd_energy = sd_of(energies);
    m.mean_cot = energies.empty()
                     ? kNan
                     : m.mean_energy /
                           (r.robot_mass * r.gravity * r.course_length);

    // Bins average only the robots that actually moved through them.
    for (int k = 0; k < nb; ++k) {
      double vs = 0.0, cs = 0.0;
      int vn = 0, cn = 0;
      for (const EpisodeMetrics& em : r.robots) {
        if (std::isfinite(em.bin_speed[k])) {
          vs += em.bin_speed[k];
          ++vn;
        }
        if (std::isfinite(em.bin_cot[k])) {
          cs += em.bin_cot[k];
          ++cn;
        }
      }
      m.curve_count[k] = vn;
      if (vn > 0) m.curve_speed[k] = vs / vn;
      if (cn > 0) m.curve_cot[k] = cs / cn;
    }
    report.morphologies.push_back(std::move(m));
  }

  const double e_base = report.morphologies[baseline].mean_energy;
  for (MorphologySummary& m : report.morphologies) {
    m.savings_pct = (std::isfinite(e_base) && e_base > 0.0 &&
                     std::isfinite(m.mean_energy))
                        ? 100.0 * (1.0 - m.mean_energy / e_base)
                        : kNan;
  }
  return report;
}

void export_metrics_csv(const TraverseResult& result, std::ostream& os) {
  os << "robot_id,t,x,y,z,speed,power\n";
  for (const EpisodeMetrics& em : result.robots) {
    for (const TrajectorySample& p : em.trajectory) {
      os << em.robot_id << ',';
      csv_number(os, p.t);
      os << ',';
      csv_number(os, p.x);
      os << ',';
      csv_number(os, p.y);
      os << ',';
      csv_number(os, p.z);
      os << ',';
      csv_number(os, p.speed);
      os << ',';
      csv_number(os, p.power);
      os << '\n';
    }
  }
}

std::vector<EpisodeMetrics> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "robot_id,t,x,y,z,speed,power")
    throw std::runtime_error("metrics csv: bad header");
  std::vector<EpisodeMetrics> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    double v[7];
    for (int i = 0; i < 7; ++i) {
      if (!std::getline(row, cell, ','))
        throw std::runtime_error("metrics csv: short row");
      v[i] = std::stod(cell);
    }
    const int id = static_cast<int>(v[0]);
    if (out.empty() || out.back().robot_id != id) {
      out.emplace_back();
      out.back().robot_id = id;
    }
    out.back().trajectory.push_back({v[1], v[2], v[3], v[4], v[5], v[6]});
  }
  return out;
}

void export_curves_csv(const BenchReport& report, std::ostream& os) {
  os << "bin_center_m";
  for (const MorphologySummary& m : report.morphologies)
    os << ',' << m.name << "_mean_speed," << m.name << "_mean_cot";
  os << '\n';
  for (size_t k = 0; k < report.bin_centers.size(); ++k) {
    csv_number(os, report.bin_centers[k]);
    for (const MorphologySummary& m : report.morphologies) {
      os << ',';
      csv_number(os, m.curve_speed[k]);
      os << ',';
      csv_number(os, m.curve_cot[k]);
    }
    os << '\n';
  }
}

void export_report_csv(const BenchReport& report, std::ostream& os) {
  os << "# savings_pct = 100*(1 - mean_energy/mean_energy[baseline]) over "
        "completing robots; baseline = "
     << report.morphologies[report.baseline].name
     << "; full-scale reference completion times s "
        "(bennett/planar/spherical forward): "
     << kReferenceCompletionBennett << '/' << kReferenceCompletionPlanar
     << '/' << kReferenceCompletionSpherical << '\n';
  os << "morphology,robots,completed,dnf,mean_completion_s,sd_completion_s,"
        "mean_energy_J,sd_energy_J,mean_cot,savings_pct,foothold_width_m,"
        "body_width_m,foothold_ratio\n";
  for (const MorphologySummary& m : report.morphologies) {
    os << m.name << ',' << (m.completed + m.dnf) << ',' << m.completed << ','
       << m.dnf << ',';
    csv_number(os, m.mean_completion);
    os << ',';
    csv_number(os, m.sd_completion);
    os << ',';
    csv_number(os, m.mean_energy);
    os << ',';
    csv_number(os, m.sd_energy);
    os << ',';
    csv_number(os, m.mean_cot);
    os << ',';
    csv_number(os, m.savings_pct);
    os << ',';
    csv_number(os, m.foothold.width);
    os << ',';
    csv_number(os, m.foothold.body_width);
    os << ',';
    csv_number(os, m.foothold.ratio);
    os << '\n';
  }
}

void write_svg_plot(std::ostream& os, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<PlotSeries>& series) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#9467bd", "#ff7f0e", "#8c564b"};
  const double W = 640, H = 420, L = 70, R = 20, T = 44, B = 52;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  for (const PlotSeries& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!any) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        any = true;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
  auto px = [&](double x) {
    return L + (x - xmin) / (xmax - xmin) * (W - L - R);
  };
  auto py = [&](double y) {
    return H - B - (y - ymin) / (ymax - ymin) * (H - T - B);
  };

  char buf[256];
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
     << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
     << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.0f\" y=\"24\" text-anchor=\"middle\" "
                "font-family=\"sans-serif\" font-size=\"15\">%s</text>\n",
                W / 2, xml_escape(title).c_str());
  os << buf;

  // Axes with five ticks each.
  std::snprintf(buf, sizeof(buf),
                "<path d=\"M %.1f %.1f L %.1f %.1f L %.1f %.1f\" "
                "fill=\"none\" stroke=\"black\"/>\n",
                L, T, L, H - B, W - R, H - B);
  os << buf;
  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                  "stroke=\"black\"/>\n",
                  px(fx), H - B, px(fx), H - B + 5);
    os << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" "
                  "font-family=\"sans-serif\" font-size=\"11\">%.3g</text>\n",
                  px(fx), H - B + 18, fx);
    os << buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                  "stroke=\"black\"/>\n",
                  L - 5, py(fy), L, py(fy));
    os << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\" "
                  "font-family=\"sans-serif\" font-size=\"11\">%.3g</text>\n",
                  L - 8, py(fy) + 4, fy);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.0f\" y=\"%.0f\" text-anchor=\"middle\" "
                "font-family=\"sans-serif\" font-size=\"13\">%s</text>\n",
                (L + W - R) / 2, H - 12, xml_escape(x_label).c_str());
  os << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"16\" y=\"%.0f\" text-anchor=\"middle\" "
                "font-family=\"sans-serif\" font-size=\"13\" "
                "transform=\"rotate(-90 16 %.0f)\">%s</text>\n",
                (T + H - B) / 2, (T + H - B) / 2,
                xml_escape(y_label).c_str());
  os << buf;

  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = kColors[si % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.8\" points=\"";
    for (size_t i = 0; i < series[si].x.size(); ++i) {
      if (!std::isfinite(series[si].x[i]) || !std::isfinite(series[si].y[i]))
        continue;
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", px(series[si].x[i]),
                    py(series[si].y[i]));
      os << buf;
    }
    os << "\"/>\n";
    const double ly = T + 16.0 * static_cast<double>(si);
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                  "stroke=\"%s\" stroke-width=\"3\"/>\n",
                  W - R - 130, ly, W - R - 108, ly, color);
    os << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" "
                  "font-size=\"12\">%s</text>\n",
                  W - R - 102, ly + 4, xml_escape(series[si].name).c_str());
    os << buf;
  }
  os << "</svg>\n";
}

}  // namespace ocl
