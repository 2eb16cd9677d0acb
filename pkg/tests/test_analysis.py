"""KDE bias-density analysis: coordinates, grids, reports, artifacts."""

from types import SimpleNamespace

import numpy as np
import pytest

from bssard import analysis as an
from bssard.core import Moment
from bssard.synthdata import (BiasRule, CorpusConfig, Region,
                              generate_corpus)

EARLY = Region(start_lo=0.0, start_hi=0.1, dur_lo=0.1, dur_hi=0.5)


def fake_sample(start, end, n_true):
    return SimpleNamespace(moment=Moment(start, end), n_true=n_true)


def biased_corpus(strength=1.0, seed=7):
    rule = BiasRule(name="early", trigger_kind="query-token",
                    trigger_id=25, region=EARLY, strength=strength,
                    rate=0.7)
    config = CorpusConfig(n=20, d_v=16, m=8, vocab=30, motifs=8,
                          context_motifs=4, train_samples=400,
                          val_samples=40, test_iid_samples=40,
                          test_ood_samples=400, rules=(rule,), seed=seed)
    return generate_corpus(config)


# -- coordinates -------------------------------------------------------------


def test_whole_video_moment_maps_to_origin_full_duration():
    assert an.moment_coordinates(fake_sample(0, 19, 20)) == (0.0, 1.0)


def test_interior_moment_coordinates():
    assert an.moment_coordinates(fake_sample(5, 6, 10)) == (0.5, 0.2)


def test_first_frame_moment_coordinates():
    assert an.moment_coordinates(fake_sample(0, 0, 4)) == (0.0, 0.25)


def test_coordinates_stay_inside_unit_square():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_true = int(rng.integers(1, 33))
        start = int(rng.integers(0, n_true))
        end = int(rng.integers(start, n_true))
        x, y = an.moment_coordinates(fake_sample(start, end, n_true))
        assert 0.0 <= x <= 1.0 and 0.0 < y <= 1.0
        assert x + y <= 1.0 + 1e-9


# -- kde ---------------------------------------------------------------------


def test_single_point_peaks_at_nearest_node():
    d = an.kde_density([(0.5, 0.5)], bandwidths=(0.05, 0.05),
                       grid_size=101)
    i, j = np.unravel_index(np.argmax(d.grid), d.grid.shape)
    assert (d.xs[i], d.ys[j]) == (0.5, 0.5)
    assert d.n_points == 1


def test_symmetric_points_give_symmetric_grid():
    d = an.kde_density([(0.3, 0.4), (0.7, 0.4)], bandwidths=(0.06, 0.06),
                       grid_size=80)
    assert np.max(np.abs(d.grid - d.grid[::-1, :])) < 1e-9


def test_grid_matches_brute_force_double_sum():
    rng = np.random.default_rng(3)
    points = rng.uniform(0.05, 0.95, size=(50, 2))
    h = (0.05, 0.08)
    d = an.kde_density(points, bandwidths=h, grid_size=40)
    ticks = np.linspace(0.0, 1.0, 40)
    direct = np.zeros((40, 40))
    for i, x in enumerate(ticks):
        for j, y in enumerate(ticks):
            kx = np.exp(-0.5 * ((x - points[:, 0]) / h[0]) ** 2) \
                / (h[0] * np.sqrt(2 * np.pi))
            ky = np.exp(-0.5 * ((y - points[:, 1]) / h[1]) ** 2) \
                / (h[1] * np.sqrt(2 * np.pi))
            direct[i, j] = np.mean(kx * ky)
    assert np.max(np.abs(d.grid - direct)) < 1e-9


def test_kde_linearity_over_disjoint_sets():
    rng = np.random.default_rng(4)
    a = rng.uniform(0.1, 0.4, size=(20, 2))
    b = rng.uniform(0.6, 0.9, size=(30, 2))
    h = (0.07, 0.07)
    da = an.kde_density(a, bandwidths=h, grid_size=50).grid
    db = an.kde_density(b, bandwidths=h, grid_size=50).grid
    dab = an.kde_density(np.vstack([a, b]), bandwidths=h,
                         grid_size=50).grid
    assert np.max(np.abs(dab - (20 * da + 30 * db) / 50)) < 1e-9


def test_larger_bandwidth_never_raises_the_peak():
    rng = np.random.default_rng(5)
    points = rng.uniform(0.2, 0.8, size=(30, 2))
    peaks = [an.kde_density(points, bandwidths=(h, h),
                            grid_size=60).grid.max()
             for h in (0.02, 0.05, 0.1, 0.2, 0.4)]
    assert all(a >= b for a, b in zip(peaks, peaks[1:]))


def test_interior_density_integrates_to_one():
    rng = np.random.default_rng(6)
    points = rng.uniform(0.35, 0.65, size=(40, 2))
    d = an.kde_density(points, bandwidths=(0.05, 0.05), grid_size=120)
    assert d.grid.min() >= 0.0
    assert abs(d.integral() - 1.0) < 1e-2


def test_silverman_default_is_used_when_unset():
    rng = np.random.default_rng(7)
    points = rng.uniform(0.0, 1.0, size=(64, 2))
    d = an.kde_density(points)
    hx, hy = an.silverman_bandwidths(points)
    assert (d.h_x, d.h_y) == (hx, hy)
    assert d.grid.shape == (100, 100)


def test_degenerate_axis_hits_bandwidth_floor():
    points = [(0.5, 0.2), (0.5, 0.8), (0.5, 0.5)]
    hx, hy = an.silverman_bandwidths(points)
    assert hx == an.BANDWIDTH_FLOOR
    assert hy > an.BANDWIDTH_FLOOR


def test_kde_input_validation():
    with pytest.raises(ValueError, match="at least one"):
        an.kde_density(np.zeros((0, 2)))
    with pytest.raises(ValueError, match="positive"):
        an.kde_density([(0.5, 0.5)], bandwidths=(0.0, 0.1))
    with pytest.raises(ValueError, match=r"\[N, 2\]"):
        an.kde_density(np.zeros((3, 3)))


def test_region_mass_of_uniformish_grid():
    grid = np.ones((50, 50))
    d = an.DensityGrid(grid=grid, h_x=0.1, h_y=0.1, n_points=1)
    assert an.region_mass(d, 0.0, 1.0) == 1.0
    # nodes step by 1/49, so 16 of the 50 lie at or below 0.3265
    third = an.region_mass(d, 0.0, 0.3265)
    assert abs(third - 16 / 50) < 1e-12


# -- trigger reports on planted corpora --------------------------------------


def test_planted_rule_concentrates_train_mass():
    corpus = biased_corpus(strength=1.0)
    report = an.per_trigger_report(corpus, "early", "train",
                                   bandwidths=(0.03, 0.05))
    assert report.count > 100
    assert an.region_mass(report.density, 0.0, 0.15) > 0.9
    assert report.mean[0] < 0.1


def test_ood_split_breaks_the_correlation():
    corpus = biased_corpus(strength=1.0)
    report = an.per_trigger_report(corpus, "early", "test-ood",
                                   bandwidths=(0.03, 0.05))
    assert report.count > 100
    mass = an.region_mass(report.density, 0.0, 0.15)
    assert 0.1 <= mass <= 0.2


def test_strength_zero_leaves_distributions_matched():
    corpus = biased_corpus(strength=0.0)
    train = an.per_trigger_report(corpus, "early", "train")
    ood = an.per_trigger_report(corpus, "early", "test-ood")
    assert an.distribution_match_pvalue(train.coords, ood.coords) > 0.001


def test_trigger_resolution_forms():
    corpus = biased_corpus()
    by_name = an.per_trigger_report(corpus, "early", "train")
    by_id = an.per_trigger_report(corpus, "query-token:25", "train")
    assert by_name.count == by_id.count
    assert np.array_equal(by_name.coords, by_id.coords)
    with pytest.raises(ValueError, match="neither"):
        an.resolve_trigger(corpus.config, "nonsense")
    with pytest.raises(ValueError, match="kind"):
        an.resolve_trigger(corpus.config, "audio-cue:3")


def test_absent_trigger_reports_no_samples():
    corpus = biased_corpus()
    report = an.per_trigger_report(corpus, "visual-motif:2", "train")
    assert report.no_samples
    assert report.count == 0 and report.density is None
    assert report.mean is None


# -- artifacts ---------------------------------------------------------------


def test_csv_sidecar_roundtrips_exactly(tmp_path):
    rng = np.random.default_rng(9)
    d = an.kde_density(rng.uniform(0, 1, size=(25, 2)),
                       bandwidths=(0.04, 0.09), grid_size=33)
    path = an.write_grid_csv(d, tmp_path / "grid.csv")
    back = an.read_grid_csv(path)
    assert np.array_equal(back.grid, d.grid)
    assert (back.h_x, back.h_y, back.n_points) == (d.h_x, d.h_y,
                                                   d.n_points)


def test_emit_plot_writes_image_and_sidecar(tmp_path):
    d = an.kde_density([(0.4, 0.3), (0.6, 0.7)], bandwidths=(0.1, 0.1),
                       grid_size=64)
    png, csv = an.emit_plot(d, tmp_path / "heat.png", title="demo")
    assert png.exists() and csv.exists()
    import matplotlib.image as mpimg
    image = mpimg.imread(png)
    assert image.shape[0] >= 64 and image.shape[1] >= 64
    assert np.array_equal(an.read_grid_csv(csv).grid, d.grid)


def test_emit_plot_svg(tmp_path):
    d = an.kde_density([(0.5, 0.5)], bandwidths=(0.1, 0.1), grid_size=16)
    svg, _ = an.emit_plot(d, tmp_path / "heat.svg")
    assert svg.read_text().lstrip().startswith("<?xml")


def test_constant_grid_sidecar_entries_all_equal(tmp_path):
    d = an.DensityGrid(grid=np.full((12, 12), 2.5), h_x=0.1, h_y=0.1,
                       n_points=4)
    path = an.write_grid_csv(d, tmp_path / "flat.csv")
    rows = path.read_text().splitlines()[1:]
    values = {v for row in rows for v in row.split(",")}
    assert values == {"2.5"}


def test_analyze_corpus_emits_per_trigger_artifacts(tmp_path):
    corpus = biased_corpus()
    reports = an.analyze_corpus(corpus, tmp_path, split="train")
    assert set(reports) == {"early"}
    assert (tmp_path / "density_early_train.png").exists()
    assert (tmp_path / "density_early_train.csv").exists()
    summary = (tmp_path / "summary_train.csv").read_text().splitlines()
    assert summary[0].startswith("trigger,split,count")
    assert summary[1].startswith("early,train,")
