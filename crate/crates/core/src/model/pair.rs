use crate::error::{Error, Result};
use crate::model::Model;

/// Student and teacher copies of one architecture. The teacher starts as an
/// exact copy and thereafter tracks the student through an exponential
/// moving average of parameter values; it is never touched by the optimizer.
#[derive(Debug, Clone)]
pub struct StudentTeacherPair<M> {
    pub student: M,
    pub teacher: M,
}

impl<M: Model> StudentTeacherPair<M> {
    pub fn new(student: M) -> StudentTeacherPair<M> {
        let teacher = student.clone_detached();
        StudentTeacherPair { student, teacher }
    }

    /// teacher <- alpha * teacher + (1 - alpha) * student, elementwise.
    pub fn ema_update(&mut self, alpha: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!("ema alpha {alpha} outside [0, 1]")));
        }
        let students = self.student.params();
        let teachers = self.teacher.params();
        debug_assert_eq!(students.len(), teachers.len());
        for (s, t) in students.iter().zip(&teachers) {
            if s.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "ema update",
                    left: s.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            let sv = s.values();
            let updated: Vec<f64> = t
                .values()
                .iter()
                .zip(sv.iter())
                .map(|(tv, sv)| alpha * tv + (1.0 - alpha) * sv)
                .collect();
            t.set_values(&updated);
        }
        Ok(())
    }
}
