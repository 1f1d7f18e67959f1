import json

import numpy as np
import pytest

from pourbench import arm_model as am


def two_link_planar():
    """Two revolute z-joints with 1 m and 0.5 m links along x."""
    return am.KinematicChain(links=(
        am.Link(axis=[0, 0, 1], rotation=np.eye(3), translation=[1.0, 0.0, 0.0]),
        am.Link(axis=[0, 0, 1], rotation=np.eye(3), translation=[0.5, 0.0, 0.0]),
    ))


def random_chain(rng, n=7):
    links = []
    for _ in range(n):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(-np.pi, np.pi)
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        rot = am.rotation_about_axis(u, angle)
        links.append(am.Link(axis=axis, rotation=rot, translation=rng.uniform(-0.3, 0.3, 3)))
    return am.KinematicChain(links=tuple(links))


def fk_oracle(chain, q):
    """Independent plain 4x4 matrix-product recomputation."""
    T = np.eye(4)
    for link, qi in zip(chain.links, q):
        J = np.eye(4)
        J[:3, :3] = am.rotation_about_axis(link.axis, qi)
        L = np.eye(4)
        L[:3, :3] = link.rotation
        L[:3, 3] = link.translation
        T = T @ J @ L
    return T[:3, :3], T[:3, 3]


class TestForwardKinematics:
    def test_zero_angles_gives_fixed_transform_product(self):
        rng = np.random.default_rng(0)
        chain = random_chain(rng)
        R, p = am.forward_kinematics(chain, np.zeros(7))
        T = np.eye(4)
        for link in chain.links:
            L = np.eye(4)
            L[:3, :3] = link.rotation
            L[:3, 3] = link.translation
            T = T @ L
        np.testing.assert_allclose(R, T[:3, :3], atol=1e-14)
        np.testing.assert_allclose(p, T[:3, 3], atol=1e-14)

    def test_two_link_planar_trigonometry(self):
        # first joint at 90 degrees folds both links onto the y axis
        _, p = am.forward_kinematics(two_link_planar(), [np.pi / 2, 0.0])
        np.testing.assert_allclose(p, [0.0, 1.5, 0.0], atol=1e-12)

    def test_matches_matrix_product_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            chain = random_chain(rng)
            q = rng.uniform(-np.pi, np.pi, 7)
            R, p = am.forward_kinematics(chain, q)
            R_ref, p_ref = fk_oracle(chain, q)
            np.testing.assert_allclose(p, p_ref, atol=1e-12)
            np.testing.assert_allclose(R, R_ref, atol=1e-12)

    def test_rotation_stays_orthonormal(self):
        rng = np.random.default_rng(2)
        chain = am.default_chain()
        for _ in range(50):
            q = rng.uniform(-np.pi, np.pi, 7)
            R, _ = am.forward_kinematics(chain, q)
            np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)

    def test_wrong_length_raises(self):
        with pytest.raises(ValueError):
            am.forward_kinematics(two_link_planar(), [0.0, 0.0, 0.0])


class TestJacobian:
    def test_one_link_lever_arm(self):
        chain = am.KinematicChain(links=(
            am.Link(axis=[0, 0, 1], rotation=np.eye(3), translation=[0.7, 0, 0]),
            am.Link(axis=[0, 0, 1], rotation=np.eye(3), translation=[0.0, 0, 0]),
        ))
        jac = am.geometric_jacobian(chain, [0.0, 0.0])
        assert np.linalg.norm(jac[:3, 0]) == pytest.approx(0.7, abs=1e-12)
        assert np.linalg.norm(jac[3:, 0]) == pytest.approx(1.0, abs=1e-12)

    def test_linear_block_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        chain = am.default_chain()
        h = 1e-6
        for _ in range(100):
            q = rng.uniform(-np.pi, np.pi, 7)
            jac = am.geometric_jacobian(chain, q)
            for i in range(7):
                dq = np.zeros(7)
                dq[i] = h
                _, p_plus = am.forward_kinematics(chain, q + dq)
                _, p_minus = am.forward_kinematics(chain, q - dq)
                fd = (p_plus - p_minus) / (2 * h)
                scale = max(1.0, np.linalg.norm(fd))
                assert np.linalg.norm(jac[:3, i] - fd) / scale < 1e-6

    def test_reference_chain_full_rank_at_generic_config(self):
        chain = am.default_chain()
        q = np.array([0.3, 0.6, -0.2, 0.9, 0.4, 0.3, 0.1])
        s = np.linalg.svd(am.geometric_jacobian(chain, q), compute_uv=False)
        assert s[-1] > 1e-9


class TestWrenchRecovery:
    chain = am.default_chain()
    q = np.array([0.0, 0.6, 0.0, 0.9, 0.0, 0.0708, 0.0])

    def test_zero_torques_zero_wrench(self):
        w = am.estimate_ee_wrench(self.chain, self.q, np.zeros(7))
        np.testing.assert_allclose(w.as_vector(), np.zeros(6), atol=1e-15)

    def test_forward_synthesis_round_trip(self):
        # 300 ml of water hanging straight down (300 * 0.0098 = 2.94 N)
        w_true = np.array([0.0, 0.0, -2.94, 0.0, 0.0, 0.0])
        torques = am.geometric_jacobian(self.chain, self.q).T @ w_true
        w = am.estimate_ee_wrench(self.chain, self.q, torques)
        np.testing.assert_allclose(w.as_vector(), w_true, atol=1e-9)

    def test_round_trip_any_wrench(self):
        rng = np.random.default_rng(4)
        jac = am.geometric_jacobian(self.chain, self.q)
        for _ in range(50):
            w_true = rng.uniform(-5, 5, 6)
            w = am.estimate_ee_wrench(self.chain, self.q, jac.T @ w_true)
            np.testing.assert_allclose(w.as_vector(), w_true, atol=1e-9)

    def test_null_space_torques_are_ignored(self):
        jac = am.geometric_jacobian(self.chain, self.q)
        # vector in null(J^T): the left-null space of the 7x6 matrix J^T
        u, s, vt = np.linalg.svd(jac.T, full_matrices=True)
        null_vec = u[:, -1]
        assert np.linalg.norm(jac @ null_vec) < 1e-9  # truly invisible to the statics
        w_true = np.array([1.0, -2.0, 3.0, 0.5, -0.2, 0.1])
        torques = jac.T @ w_true + 5.0 * null_vec
        w = am.estimate_ee_wrench(self.chain, self.q, torques)
        np.testing.assert_allclose(w.as_vector(), w_true, atol=1e-8)

    def test_singular_configuration_raises(self):
        # fully stretched arm: all z-axis joints aligned with their translations
        with pytest.raises(am.SingularityError):
            am.estimate_ee_wrench(self.chain, np.zeros(7), np.ones(7))

    def test_too_few_joints_rejected(self):
        with pytest.raises(ValueError):
            am.wrench_solver(two_link_planar(), [0.0, 0.0])


class TestTypes:
    def test_axis_must_be_unit(self):
        with pytest.raises(ValueError):
            am.Link(axis=[0, 0, 2], rotation=np.eye(3), translation=[0, 0, 0])

    def test_chain_needs_two_joints(self):
        with pytest.raises(ValueError):
            am.KinematicChain(links=(
                am.Link(axis=[0, 0, 1], rotation=np.eye(3), translation=[1, 0, 0]),))

    def test_joint_state_validation(self):
        with pytest.raises(ValueError):
            am.JointState(positions=[0, 0], velocities=[0], torques=[0, 0])
        with pytest.raises(ValueError):
            am.JointState(positions=[0, np.nan], velocities=[0, 0], torques=[0, 0])

    def test_wrench_finite(self):
        with pytest.raises(ValueError):
            am.Wrench(force=[np.inf, 0, 0], torque=[0, 0, 0])

    def test_chain_json_round_trip(self, tmp_path):
        chain = am.default_chain()
        path = tmp_path / "chain.json"
        path.write_text(json.dumps(chain.to_dict()))
        again = am.KinematicChain.from_json_file(path)
        assert again.n_joints == chain.n_joints
        q = np.linspace(-1, 1, 7)
        np.testing.assert_allclose(am.forward_kinematics(again, q)[1],
                                   am.forward_kinematics(chain, q)[1], atol=1e-15)
