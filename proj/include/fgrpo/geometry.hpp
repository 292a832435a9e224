// Box overlap scoring and optimal box matching.
#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "core.hpp"

namespace fgrpo {

inline double box_area(const BBox& b) { return b.w() * b.h(); }

inline double iou(const BBox& a, const BBox& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = box_area(a) + box_area(b) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// Complete IoU: overlap minus center-distance and aspect-ratio penalties.
// Range (-1, 1]; equals 1 only for identical boxes; never exceeds iou().
inline double ciou(const BBox& a, const BBox& b) {
    const double overlap = iou(a, b);

    const double dx = 0.5 * (a.x1 + a.x2) - 0.5 * (b.x1 + b.x2);
    const double dy = 0.5 * (a.y1 + a.y2) - 0.5 * (b.y1 + b.y2);
    const double rho2 = dx * dx + dy * dy;
    const double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
    const double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
    const double c2 = cw * cw + ch * ch;
    const double center_term = c2 > 0.0 ? rho2 / c2 : 0.0;

    const double da = std::atan(a.w() / a.h()) - std::atan(b.w() / b.h());
    const double v = (4.0 / (M_PI * M_PI)) * da * da;
    const double alpha = (overlap == 1.0 && v == 0.0) ? 0.0 : v / ((1.0 - overlap) + v);

    return overlap - center_term - alpha * v;
}

// Hungarian method with potentials, O(n^3), square cost matrix, minimizes total cost.
// rowsol[i] = column assigned to row i.
inline double solve_min_cost_assignment(const std::vector<std::vector<double>>& cost,
                                        std::vector<int>& rowsol) {
    const int n = static_cast<int>(cost.size());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) { minv[j] = cur; way[j] = j0; }
                if (minv[j] < delta) { delta = minv[j]; j1 = j; }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) { u[p[j]] += delta; v[j] -= delta; }
                else minv[j] -= delta;
            }
            j0 = j1;
        } while (p[j0] != 0);
        do { const int j1 = way[j0]; p[j0] = p[j1]; j0 = j1; } while (j0 != 0);
    }
    rowsol.assign(n, -1);
    double total = 0.0;
    for (int j = 1; j <= n; ++j) {
        if (p[j] == 0) continue;
        rowsol[p[j] - 1] = j - 1;
        total += cost[p[j] - 1][j - 1];
    }
    return total;
}

struct Assignment {
    std::vector<std::pair<int, int>> pairs; // (pred index, gt index)
    double total_score = 0.0;               // maximized sum of clamped CIoU
};

// Injective matching of size min(N, M) maximizing the sum of max(0, ciou).
// Rectangular inputs are padded with zero-score dummies.
inline Assignment hungarian_match(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    Assignment out;
    const int n = static_cast<int>(pred.size());
    const int m = static_cast<int>(gt.size());
    if (n == 0 || m == 0) return out;

    const int s = std::max(n, m);
    std::vector<std::vector<double>> score(s, std::vector<double>(s, 0.0));
    std::vector<std::vector<double>> cost(s, std::vector<double>(s, 1.0));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            score[i][j] = std::max(0.0, ciou(pred[i], gt[j]));
            cost[i][j] = 1.0 - score[i][j];
        }
    }

    std::vector<int> rowsol;
    solve_min_cost_assignment(cost, rowsol);
    for (int i = 0; i < n; ++i) {
        const int j = rowsol[i];
        if (j >= 0 && j < m) {
            out.pairs.emplace_back(i, j);
            out.total_score += score[i][j];
        }
    }
    return out;
}

// Matched clamped-CIoU sum divided by max(N, M); 0 when either side is empty.
inline double spatial_grounding_reward(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    if (pred.empty() || gt.empty()) return 0.0;
    const Assignment a = hungarian_match(pred, gt);
    return a.total_score / static_cast<double>(std::max(pred.size(), gt.size()));
}

} // namespace fgrpo
